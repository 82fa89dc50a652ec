#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plmlad/error.hpp"

namespace plmlad {

enum class TrueFunction { sine, additive_smooth, composite };

enum class ErrorLaw { laplace, student_t, contaminated_normal };

// Error law with its parameters; only the fields of the selected law are read.
struct ErrorSpec {
  ErrorLaw law = ErrorLaw::laplace;
  double b = 1.0;      // laplace scale
  double nu = 3.0;     // student_t degrees of freedom
  double rho = 0.1;    // contamination probability
  double kappa = 5.0;  // contamination standard deviation

  void validate() const {
    switch (law) {
      case ErrorLaw::laplace:
        if (!(b > 0.0)) throw ArgumentError("laplace scale b must be positive");
        break;
      case ErrorLaw::student_t:
        if (!(nu > 0.0)) throw ArgumentError("student_t nu must be positive");
        break;
      case ErrorLaw::contaminated_normal:
        if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("contaminated_normal rho must lie in [0,1]");
        if (!(kappa > 0.0)) throw ArgumentError("contaminated_normal kappa must be positive");
        break;
    }
  }
};

struct GenConfig {
  std::int64_t N = 2000;
  int d = 2;
  int l = 1;
  Eigen::VectorXd beta0 = (Eigen::VectorXd(2) << 1.0, -1.0).finished();
  TrueFunction g0 = TrueFunction::sine;
  // additive_smooth coefficients a_j; empty means all ones.
  std::vector<double> g0_coeffs;
  ErrorSpec error;
  // X = (V + Z_1 * 1) / 2 when set, otherwise X is independent of Z.
  bool dependent = false;
  std::uint64_t seed = 1;

  void validate() const {
    if (N < 1) throw ArgumentError("gen.N must be positive");
    if (d < 1 || l < 1) throw ArgumentError("gen.d and gen.l must be positive");
    if (beta0.size() != d) throw ArgumentError("gen.beta0 must have length d");
    if (!g0_coeffs.empty() && static_cast<int>(g0_coeffs.size()) != l)
      throw ArgumentError("gen.g0_coeffs must have length l");
    error.validate();
  }
};

struct Sample {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  double y = 0.0;
};

// Observations U_i = (X_i, Y_i, Z_i), one row per sample.
struct Dataset {
  Eigen::MatrixXd X;  // N x d
  Eigen::MatrixXd Z;  // N x l
  Eigen::VectorXd Y;  // N
  std::optional<GenConfig> provenance;  // empty for external data

  Eigen::Index size() const { return Y.size(); }
  int d() const { return static_cast<int>(X.cols()); }
  int l() const { return static_cast<int>(Z.cols()); }

  Sample sample(Eigen::Index i) const { return {X.row(i).transpose(), Z.row(i).transpose(), Y(i)}; }

  void validate() const {
    if (X.rows() != Y.size() || Z.rows() != Y.size()) throw ConfigError("dataset row counts disagree");
    if (Y.size() == 0) throw ArgumentError("dataset is empty");
    const auto in_unit = [](const Eigen::MatrixXd& m) {
      return m.size() == 0 || (m.minCoeff() >= 0.0 && m.maxCoeff() <= 1.0);
    };
    if (!in_unit(X) || !in_unit(Z)) throw ConfigError("covariates must lie in [0,1]");
  }
};

inline Dataset dataset_from_samples(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ArgumentError("empty sample list");
  const auto n = static_cast<Eigen::Index>(samples.size());
  Dataset out;
  out.X.resize(n, samples.front().x.size());
  out.Z.resize(n, samples.front().z.size());
  out.Y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.x.size() != out.X.cols() || s.z.size() != out.Z.cols()) throw ConfigError("ragged sample list");
    out.X.row(i) = s.x.transpose();
    out.Z.row(i) = s.z.transpose();
    out.Y(i) = s.y;
  }
  return out;
}

// CSV with header x1..xd,z1..zl,y.
inline void write_dataset_csv(const Dataset& data, std::ostream& os) {
  for (int j = 0; j < data.d(); ++j) os << 'x' << j + 1 << ',';
  for (int j = 0; j < data.l(); ++j) os << 'z' << j + 1 << ',';
  os << "y\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.d(); ++j) os << data.X(i, j) << ',';
    for (int j = 0; j < data.l(); ++j) os << data.Z(i, j) << ',';
    os << data.Y(i) << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset csv: missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  int d = 0, l = 0;
  std::size_t pos = 0;
  while (pos < header.size() && header[pos] == "x" + std::to_string(d + 1)) ++d, ++pos;
  while (pos < header.size() && header[pos] == "z" + std::to_string(l + 1)) ++l, ++pos;
  if (pos + 1 != header.size() || header[pos] != "y" || d == 0 || l == 0)
    throw ConfigError("dataset csv: header must be x1..xd,z1..zl,y");

  std::vector<Sample> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("dataset csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (vals.size() != header.size())
      throw ConfigError("dataset csv line " + std::to_string(line_no) + ": wrong column count");
    Sample s;
    s.x = Eigen::Map<Eigen::VectorXd>(vals.data(), d);
    s.z = Eigen::Map<Eigen::VectorXd>(vals.data() + d, l);
    s.y = vals.back();
    rows.push_back(std::move(s));
  }
  Dataset data = dataset_from_samples(rows);
  data.validate();
  return data;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset csv: " + path);
  return read_dataset_csv(in);
}

}  // namespace plmlad
