#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "plmlad/dataset.hpp"
#include "plmlad/error.hpp"
#include "plmlad/numeric.hpp"

namespace plmlad {

// Sparse ReLU network class: depth L, widths q_0..q_L (q_L = 1), at most s
// nonzero weights, entrywise weight bound 1, monitored output bound A.
struct NetworkArch {
  std::vector<int> widths;
  std::int64_t sparsity = 0;
  double output_bound = 1.0;

  int depth() const { return static_cast<int>(widths.size()) - 1; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (std::size_t k = 1; k < widths.size(); ++k)
      n += static_cast<std::int64_t>(widths[k]) * (widths[k - 1] + 1);
    return n;
  }

  void validate() const {
    if (widths.size() < 3) throw ConfigError("arch: depth L must be at least 2 (widths needs L+1 >= 3 entries)");
    for (int q : widths)
      if (q < 1) throw ConfigError("arch: every width must be >= 1");
    if (widths.back() != 1) throw ConfigError("arch: output width q_L must be 1");
    if (sparsity < 0) throw ConfigError("arch: sparsity budget must be nonnegative");
    if (sparsity > parameter_count())
      throw ConfigError("arch: sparsity budget " + std::to_string(sparsity) + " exceeds parameter count " +
                        std::to_string(parameter_count()));
    if (!(output_bound > 0.0)) throw ConfigError("arch: output_bound must be positive");
  }
};

// Weight matrices W_1..W_L with the bias absorbed as the last column, so
// layer k has shape q_k x (q_{k-1} + 1).
class WeightStack {
 public:
  WeightStack() = default;

  explicit WeightStack(std::vector<Eigen::MatrixXd> layers) : layers_(std::move(layers)) {
    for (std::size_t k = 1; k < layers_.size(); ++k)
      if (layers_[k].cols() != layers_[k - 1].rows() + 1)
        throw ConfigError("weight stack: layer " + std::to_string(k + 1) + " has incompatible column count");
  }

  static WeightStack zeros(std::span<const int> widths) {
    if (widths.size() < 2) throw ConfigError("weight stack needs at least two widths");
    std::vector<Eigen::MatrixXd> layers;
    for (std::size_t k = 1; k < widths.size(); ++k)
      layers.push_back(Eigen::MatrixXd::Zero(widths[k], widths[k - 1] + 1));
    return WeightStack(std::move(layers));
  }

  int depth() const { return static_cast<int>(layers_.size()); }
  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().cols()) - 1; }

  std::vector<int> widths() const {
    std::vector<int> q;
    if (layers_.empty()) return q;
    q.push_back(input_dim());
    for (const auto& w : layers_) q.push_back(static_cast<int>(w.rows()));
    return q;
  }

  const Eigen::MatrixXd& layer(int k) const { return layers_.at(static_cast<std::size_t>(k)); }
  Eigen::MatrixXd& layer(int k) { return layers_.at(static_cast<std::size_t>(k)); }
  const std::vector<Eigen::MatrixXd>& layers() const { return layers_; }

  std::int64_t entry_count() const {
    std::int64_t n = 0;
    for (const auto& w : layers_) n += w.size();
    return n;
  }

  // Exact count of entries with |w| > 0.
  std::int64_t nonzeros() const {
    std::int64_t n = 0;
    for (const auto& w : layers_) n += (w.array() != 0.0).count();
    return n;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& w : layers_)
      if (w.size() > 0) m = std::max(m, w.cwiseAbs().maxCoeff());
    return m;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : layers_) s += w.squaredNorm();
    return s;
  }

  bool same_shape(const WeightStack& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t k = 0; k < layers_.size(); ++k)
      if (layers_[k].rows() != o.layers_[k].rows() || layers_[k].cols() != o.layers_[k].cols()) return false;
    return true;
  }

  void require_shape(std::span<const int> widths) const {
    const auto q = this->widths();
    if (!std::equal(q.begin(), q.end(), widths.begin(), widths.end()))
      throw ConfigError("weight stack shape does not match architecture");
  }

  // this += a * other
  WeightStack& axpy(double a, const WeightStack& other) {
    if (!same_shape(other)) throw ConfigError("weight stack shape mismatch");
    for (std::size_t k = 0; k < layers_.size(); ++k) layers_[k] += a * other.layers_[k];
    return *this;
  }

  WeightStack& operator*=(double a) {
    for (auto& w : layers_) w *= a;
    return *this;
  }

  // Visit entries in lexicographic (layer, row, col) order.
  template <typename F>
  void for_each_entry(F&& f) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (Eigen::Index j = 0; j < layers_[i].rows(); ++j)
        for (Eigen::Index k = 0; k < layers_[i].cols(); ++k) f(static_cast<int>(i), j, k, layers_[i](j, k));
  }

  friend bool operator==(const WeightStack& a, const WeightStack& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t k = 0; k < a.layers_.size(); ++k)
      if (a.layers_[k] != b.layers_[k]) return false;
    return true;
  }

 private:
  std::vector<Eigen::MatrixXd> layers_;
};

// theta = (beta, W) together with the box radius C for beta.
struct PlmParams {
  Eigen::VectorXd beta;
  WeightStack weights;
  double beta_bound = 10.0;

  bool in_box() const {
    return (beta.size() == 0 || beta.cwiseAbs().maxCoeff() <= beta_bound) && weights.max_abs() <= 1.0;
  }
};

// A (beta, W)-shaped direction: subgradients and steps.
struct ParamGradient {
  Eigen::VectorXd beta;
  WeightStack weights;

  static ParamGradient zeros_like(const PlmParams& theta) {
    return {Eigen::VectorXd::Zero(theta.beta.size()), WeightStack::zeros(theta.weights.widths())};
  }

  ParamGradient& axpy(double a, const ParamGradient& o) {
    beta += a * o.beta;
    weights.axpy(a, o.weights);
    return *this;
  }

  double squared_norm() const { return beta.squaredNorm() + weights.squared_norm(); }
};

// Activations of one batched forward pass, one column per sample.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> input;  // input[k]: augmented input of layer k, (q_k + 1) x B
  std::vector<Eigen::MatrixXd> pre;    // pre[k]: W_k * input[k], q_{k+1} x B
};

// Batched forward pass. zt holds one input per column (q_0 x B).
inline Eigen::RowVectorXd forward_batch(const WeightStack& w, const Eigen::MatrixXd& zt, ForwardCache& cache) {
  const int L = w.depth();
  if (L < 1) throw ConfigError("empty weight stack");
  if (zt.rows() != w.input_dim()) throw ConfigError("input dimension does not match weight stack");
  const Eigen::Index B = zt.cols();
  cache.input.resize(static_cast<std::size_t>(L));
  cache.pre.resize(static_cast<std::size_t>(L));
  auto& in0 = cache.input[0];
  in0.resize(zt.rows() + 1, B);
  in0.topRows(zt.rows()) = zt;
  in0.bottomRows(1).setOnes();
  for (int k = 0; k < L; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    cache.pre[uk].noalias() = w.layer(k) * cache.input[uk];
    if (k + 1 < L) {
      auto& next = cache.input[uk + 1];
      next.resize(cache.pre[uk].rows() + 1, B);
      next.topRows(cache.pre[uk].rows()) = cache.pre[uk].cwiseMax(0.0);
      next.bottomRows(1).setOnes();
    }
  }
  return cache.pre.back().row(0);
}

inline Eigen::RowVectorXd forward_batch(const WeightStack& w, const Eigen::MatrixXd& zt) {
  ForwardCache cache;
  return forward_batch(w, zt, cache);
}

// g(W; z) with ReLU hidden layers and a linear output layer.
inline double forward(const WeightStack& w, const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() != w.input_dim()) throw ConfigError("input dimension does not match weight stack");
  return forward_batch(w, Eigen::MatrixXd(z))(0);
}

inline double predict(const PlmParams& theta, const Eigen::Ref<const Eigen::VectorXd>& x,
                      const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (x.size() != theta.beta.size()) throw ConfigError("x dimension does not match beta");
  return theta.beta.dot(x) + forward(theta.weights, z);
}

// Network outputs for every row of data.Z, evaluated in fixed-size chunks.
inline Eigen::VectorXd network_outputs(const WeightStack& w, const Eigen::MatrixXd& Z) {
  constexpr Eigen::Index kChunk = 1024;
  Eigen::VectorXd out(Z.rows());
  ForwardCache cache;
  for (Eigen::Index start = 0; start < Z.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, Z.rows() - start);
    out.segment(start, len) = forward_batch(w, Z.middleRows(start, len).transpose(), cache).transpose();
  }
  return out;
}

// Residuals Y_i - beta'X_i - g(W; Z_i).
inline Eigen::VectorXd residuals(const PlmParams& theta, const Dataset& data) {
  if (data.d() != theta.beta.size()) throw ConfigError("dataset d does not match beta");
  return data.Y - data.X * theta.beta - network_outputs(theta.weights, data.Z);
}

// Backpropagates upstream derivatives (1 x B, w.r.t. the network output)
// through a cached forward pass, accumulating into grads.
inline void backprop_weights(const WeightStack& w, const ForwardCache& cache, Eigen::MatrixXd delta,
                             WeightStack& grads) {
  const int L = w.depth();
  for (int k = L - 1; k >= 0; --k) {
    const auto uk = static_cast<std::size_t>(k);
    grads.layer(k).noalias() += delta * cache.input[uk].transpose();
    if (k > 0) {
      const auto& prev = cache.pre[uk - 1];
      Eigen::MatrixXd next = w.layer(k).leftCols(prev.rows()).transpose() * delta;
      delta = next.cwiseProduct((prev.array() >= 0.0).cast<double>().matrix());
    }
  }
}

// One Clarke subgradient of (1/n) sum_i |Y_i - beta'X_i - g(W; Z_i)| over
// the given rows, with sign(0) = +1 and ReLU slope 1 at 0.
inline ParamGradient param_subgradient(const PlmParams& theta, const Dataset& data,
                                       std::span<const Eigen::Index> rows) {
  if (rows.empty()) throw ArgumentError("param_subgradient: empty batch");
  if (data.d() != theta.beta.size()) throw ConfigError("dataset d does not match beta");
  const auto B = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd zt(data.l(), B);
  Eigen::MatrixXd xb(B, data.d());
  Eigen::VectorXd yb(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    zt.col(i) = data.Z.row(r).transpose();
    xb.row(i) = data.X.row(r);
    yb(i) = data.Y(r);
  }
  ForwardCache cache;
  const Eigen::RowVectorXd g = forward_batch(theta.weights, zt, cache);
  const Eigen::VectorXd r = yb - xb * theta.beta - g.transpose();
  Eigen::RowVectorXd coef(B);
  for (Eigen::Index i = 0; i < B; ++i) coef(i) = -signum(r(i)) / static_cast<double>(B);

  ParamGradient out = ParamGradient::zeros_like(theta);
  out.beta = xb.transpose() * coef.transpose();
  backprop_weights(theta.weights, cache, coef, out.weights);
  return out;
}

inline ParamGradient param_subgradient(const PlmParams& theta, const Dataset& data) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(data.size()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  return param_subgradient(theta, data, rows);
}

inline ParamGradient param_subgradient(const PlmParams& theta, const std::vector<Sample>& batch) {
  if (batch.empty()) throw ArgumentError("param_subgradient: empty batch");
  return param_subgradient(theta, dataset_from_samples(batch));
}

// dg/dz at z, excluding bias columns (ReLU slope 1 at 0).
inline Eigen::VectorXd input_jacobian(const WeightStack& w, const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() != w.input_dim()) throw ConfigError("input dimension does not match weight stack");
  ForwardCache cache;
  forward_batch(w, Eigen::MatrixXd(z), cache);
  Eigen::MatrixXd delta = Eigen::MatrixXd::Ones(1, 1);
  for (int k = w.depth() - 1; k > 0; --k) {
    const auto& prev = cache.pre[static_cast<std::size_t>(k) - 1];
    Eigen::MatrixXd next = w.layer(k).leftCols(prev.rows()).transpose() * delta;
    delta = next.cwiseProduct((prev.array() >= 0.0).cast<double>().matrix());
  }
  return w.layer(0).leftCols(w.input_dim()).transpose() * delta;
}

// Mean over columns of zt of the l1 norm of the input Jacobian, and
// optionally its weight gradient for the current activation pattern, with
// sign(0) = +1 on Jacobian entries. Bias columns get zero gradient.
struct JacobianL1 {
  double mean_l1 = 0.0;
  WeightStack grad;
};

inline JacobianL1 jacobian_l1(const WeightStack& w, const Eigen::MatrixXd& zt, bool with_gradient) {
  const int L = w.depth();
  const Eigen::Index B = zt.cols();
  if (B == 0) throw ArgumentError("jacobian_l1: empty batch");
  ForwardCache cache;
  forward_batch(w, zt, cache);

  // left[k] = d g / d pre[k], q_{k+1} x B
  std::vector<Eigen::MatrixXd> left(static_cast<std::size_t>(L));
  left.back() = Eigen::MatrixXd::Ones(1, B);
  std::vector<Eigen::MatrixXd> masks(static_cast<std::size_t>(L));
  for (int k = L - 1; k > 0; --k) {
    const auto uk = static_cast<std::size_t>(k);
    masks[uk - 1] = (cache.pre[uk - 1].array() >= 0.0).cast<double>().matrix();
    Eigen::MatrixXd next = w.layer(k).leftCols(cache.pre[uk - 1].rows()).transpose() * left[uk];
    left[uk - 1] = next.cwiseProduct(masks[uk - 1]);
  }
  const int q0 = w.input_dim();
  const Eigen::MatrixXd J = w.layer(0).leftCols(q0).transpose() * left[0];  // q0 x B

  JacobianL1 out;
  out.mean_l1 = J.cwiseAbs().sum() / static_cast<double>(B);
  if (!with_gradient) return out;

  out.grad = WeightStack::zeros(w.widths());
  Eigen::MatrixXd right = J.unaryExpr([](double v) { return signum(v); });  // q0 x B
  for (int k = 0; k < L; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const Eigen::Index in = right.rows();
    out.grad.layer(k).leftCols(in).noalias() = left[uk] * right.transpose() / static_cast<double>(B);
    if (k + 1 < L) {
      Eigen::MatrixXd next = w.layer(k).leftCols(in) * right;
      right = next.cwiseProduct(masks[uk]);
    }
  }
  return out;
}

// Worst-case |g(z)| over z in [0,1]^{q_0} given entrywise weights <= 1:
// b_0 = 1, b_k = q_{k-1} b_{k-1} + 1, attained by all-ones weights at z = 1.
inline double worst_case_output_bound(std::span<const int> widths) {
  double b = 1.0;
  for (std::size_t k = 1; k < widths.size(); ++k) b = widths[k - 1] * b + 1.0;
  return b;
}

// Largest |g(Z_i)| on the rows of Z; compared against NetworkArch::output_bound
// as a diagnostic only.
inline double observed_output_sup(const WeightStack& w, const Eigen::MatrixXd& Z) {
  const Eigen::VectorXd g = network_outputs(w, Z);
  return g.size() == 0 ? 0.0 : g.cwiseAbs().maxCoeff();
}

// {"widths": [...], "layers": [[row-major entries], ...]}
inline void to_json(nlohmann::json& j, const WeightStack& w) {
  j = nlohmann::json::object();
  j["widths"] = w.widths();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& m : w.layers()) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
    layers.push_back(std::move(flat));
  }
  j["layers"] = std::move(layers);
}

inline void from_json(const nlohmann::json& j, WeightStack& w) {
  if (!j.is_object() || !j.contains("widths") || !j.contains("layers"))
    throw ConfigError("weight stack json needs 'widths' and 'layers'");
  const auto widths = j.at("widths").get<std::vector<int>>();
  const auto& layers = j.at("layers");
  if (widths.size() < 2 || layers.size() != widths.size() - 1)
    throw ConfigError("weight stack json: layer count does not match widths");
  WeightStack out = WeightStack::zeros(widths);
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const auto flat = layers.at(k).get<std::vector<double>>();
    auto& m = out.layer(static_cast<int>(k));
    if (static_cast<Eigen::Index>(flat.size()) != m.size())
      throw ConfigError("weight stack json: layer " + std::to_string(k + 1) + " has wrong entry count");
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[static_cast<std::size_t>(r * m.cols() + c)];
  }
  w = std::move(out);
}

}  // namespace plmlad
