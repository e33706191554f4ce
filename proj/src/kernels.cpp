#include "proker/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "proker/error.hpp"
#include "proker/metrics.hpp"
#include "proker/parallel.hpp"

namespace proker {

namespace {

constexpr Index kBlockRows = 64;
// Expanded distances below this fraction of |a|^2 + |b|^2 are recomputed
// from the difference vector to avoid cancellation.
constexpr double kCancellationGuard = 1e-6;
// Median heuristic looks at no more than this many rows.
constexpr Index kMedianRows = 2000;

Matrix whiten(const KernelSpec& spec, const Matrix& m) {
  if (spec.metric() == MetricKind::kMahalanobis) return m * spec.whitening();
  return m;
}

double apply_family(const KernelSpec& spec, double sq_dist, double dot) {
  switch (spec.family()) {
    case KernelFamily::kRbf: return std::exp(-0.5 * spec.beta_value() * sq_dist);
    case KernelFamily::kLinear: return dot;
    case KernelFamily::kPolynomial: return std::pow(dot, spec.degree());
    case KernelFamily::kEpanechnikov: return 0.75 * std::max(0.0, 1.0 - sq_dist);
  }
  return 0.0;
}

bool uses_distance(KernelFamily f) {
  return f == KernelFamily::kRbf || f == KernelFamily::kEpanechnikov;
}

void check_dims(Index a, Index b) {
  if (a != b) {
    throw Error(ErrorCode::kDimMismatch,
                "vector dims " + std::to_string(a) + " and " + std::to_string(b) + " differ");
  }
}

// Squared distances between already-whitened row sets.
Matrix sq_distances_whitened(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  const Vector nb = b.rowwise().squaredNorm();
  const Index blocks = (a.rows() + kBlockRows - 1) / kBlockRows;
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t blk) {
    const Index r0 = static_cast<Index>(blk) * kBlockRows;
    const Index nr = std::min(kBlockRows, a.rows() - r0);
    const auto rows = a.middleRows(r0, nr);
    const Vector na = rows.rowwise().squaredNorm();
    Matrix d = (-2.0 * rows * b.transpose()).eval();
    for (Index j = 0; j < b.rows(); ++j) {
      for (Index i = 0; i < nr; ++i) {
        const double scale = na[i] + nb[j];
        double v = d(i, j) + scale;
        if (v < kCancellationGuard * scale) v = (rows.row(i) - b.row(j)).squaredNorm();
        d(i, j) = v;
      }
    }
    out.middleRows(r0, nr) = d;
  });
  return out;
}

Matrix dot_products(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  const Index blocks = (a.rows() + kBlockRows - 1) / kBlockRows;
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t blk) {
    const Index r0 = static_cast<Index>(blk) * kBlockRows;
    const Index nr = std::min(kBlockRows, a.rows() - r0);
    out.middleRows(r0, nr).noalias() = a.middleRows(r0, nr) * b.transpose();
  });
  return out;
}

}  // namespace

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::kRbf: return "rbf";
    case KernelFamily::kLinear: return "linear";
    case KernelFamily::kPolynomial: return "polynomial";
    case KernelFamily::kEpanechnikov: return "epanechnikov";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "rbf") return KernelFamily::kRbf;
  if (name == "linear") return KernelFamily::kLinear;
  if (name == "polynomial" || name == "poly") return KernelFamily::kPolynomial;
  if (name == "epanechnikov") return KernelFamily::kEpanechnikov;
  throw Error(ErrorCode::kInvalidKernel, "unknown kernel family '" + name + "'");
}

KernelSpec KernelSpec::rbf(std::optional<double> beta) {
  KernelSpec s;
  s.beta_ = beta;
  s.validate();
  return s;
}

KernelSpec KernelSpec::linear() {
  KernelSpec s;
  s.family_ = KernelFamily::kLinear;
  return s;
}

KernelSpec KernelSpec::polynomial(int degree) {
  KernelSpec s;
  s.family_ = KernelFamily::kPolynomial;
  s.degree_ = degree;
  s.validate();
  return s;
}

KernelSpec KernelSpec::epanechnikov() {
  KernelSpec s;
  s.family_ = KernelFamily::kEpanechnikov;
  return s;
}

KernelSpec KernelSpec::rbf_mahalanobis(std::optional<double> beta, const Matrix& precision,
                                       double shrinkage) {
  KernelSpec s;
  s.metric_ = MetricKind::kMahalanobis;
  s.beta_ = beta;
  s.shrinkage_ = shrinkage;
  s.precision_ = precision;
  if (precision.rows() != precision.cols() || precision.rows() == 0) {
    throw Error(ErrorCode::kInvalidKernel, "precision matrix must be square and non-empty");
  }
  if ((precision - precision.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw Error(ErrorCode::kInvalidKernel, "precision matrix is not symmetric");
  }
  Eigen::LLT<Matrix> llt(0.5 * (precision + precision.transpose()));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kInvalidKernel, "precision matrix is not positive definite");
  }
  s.whitening_ = llt.matrixL();
  s.validate();
  return s;
}

KernelSpec KernelSpec::rbf_mahalanobis_shrunk(std::optional<double> beta, double shrinkage) {
  KernelSpec s;
  s.metric_ = MetricKind::kMahalanobis;
  s.beta_ = beta;
  s.shrinkage_ = shrinkage;
  s.validate();
  return s;
}

double KernelSpec::beta_value() const {
  if (!beta_) throw Error(ErrorCode::kInvalidKernel, "kernel bandwidth beta is unresolved");
  return *beta_;
}

KernelSpec KernelSpec::with_beta(double beta) const {
  KernelSpec s = *this;
  s.beta_ = beta;
  s.validate();
  return s;
}

bool KernelSpec::is_resolved() const {
  if (family_ == KernelFamily::kRbf && !beta_) return false;
  if (metric_ == MetricKind::kMahalanobis && !precision_) return false;
  return true;
}

void KernelSpec::validate() const {
  if (family_ == KernelFamily::kRbf && beta_ && !(*beta_ > 0.0 && std::isfinite(*beta_))) {
    throw Error(ErrorCode::kInvalidKernel, "RBF beta must be positive");
  }
  if (family_ == KernelFamily::kPolynomial && degree_ < 1) {
    throw Error(ErrorCode::kInvalidKernel, "polynomial degree must be >= 1");
  }
  if (metric_ == MetricKind::kMahalanobis && family_ != KernelFamily::kRbf) {
    throw Error(ErrorCode::kInvalidKernel, "Mahalanobis metric applies to the RBF kernel only");
  }
  if (metric_ == MetricKind::kMahalanobis && !(shrinkage_ >= 0.0 && shrinkage_ <= 1.0)) {
    throw Error(ErrorCode::kInvalidKernel, "shrinkage must lie in [0, 1]");
  }
}

nlohmann::json KernelSpec::to_json() const {
  nlohmann::json j;
  j["family"] = to_string(family_);
  if (family_ == KernelFamily::kRbf) {
    if (beta_) j["beta"] = *beta_;
    j["metric"] = metric_ == MetricKind::kEuclidean ? "euclidean" : "mahalanobis";
  }
  if (family_ == KernelFamily::kPolynomial) j["degree"] = degree_;
  if (metric_ == MetricKind::kMahalanobis) {
    j["shrinkage"] = shrinkage_;
    if (precision_) {
      nlohmann::json rows = nlohmann::json::array();
      for (Index i = 0; i < precision_->rows(); ++i) {
        const Vector r = precision_->row(i).transpose();
        rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
      }
      j["precision"] = rows;
    }
  }
  return j;
}

KernelSpec KernelSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("family") || !j["family"].is_string()) {
    throw Error(ErrorCode::kInvalidKernel, "kernel JSON needs a string 'family'");
  }
  try {
    const KernelFamily family = kernel_family_from_string(j["family"].get<std::string>());
    std::optional<double> beta;
    if (j.contains("beta") && !j["beta"].is_null()) beta = j["beta"].get<double>();
    const std::string metric = j.value("metric", std::string("euclidean"));
    if (metric == "mahalanobis") {
      if (family != KernelFamily::kRbf) {
        throw Error(ErrorCode::kInvalidKernel, "Mahalanobis metric applies to the RBF kernel only");
      }
      if (j.contains("precision")) {
        const auto rows = j["precision"].get<std::vector<std::vector<double>>>();
        Matrix p(static_cast<Index>(rows.size()), static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != rows.size()) {
            throw Error(ErrorCode::kInvalidKernel, "precision matrix must be square");
          }
          for (std::size_t c = 0; c < rows.size(); ++c) {
            p(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
          }
        }
        return rbf_mahalanobis(beta, p, j.value("shrinkage", 0.1));
      }
      return rbf_mahalanobis_shrunk(beta, j.value("shrinkage", 0.1));
    }
    if (metric != "euclidean") throw Error(ErrorCode::kInvalidKernel, "unknown metric '" + metric + "'");
    switch (family) {
      case KernelFamily::kRbf: return rbf(beta);
      case KernelFamily::kLinear: return linear();
      case KernelFamily::kPolynomial: return polynomial(j.value("degree", 2));
      case KernelFamily::kEpanechnikov: return epanechnikov();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidKernel, std::string("malformed kernel JSON: ") + e.what());
  }
  return {};
}

void OutputKernel::validate() const {
  if (matrix_b.rows() != matrix_b.cols()) {
    throw Error(ErrorCode::kInvalidKernel, "output kernel must be square");
  }
  if ((matrix_b - matrix_b.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw Error(ErrorCode::kInvalidKernel, "output kernel is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(matrix_b, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw Error(ErrorCode::kInvalidKernel, "output kernel is not positive semi-definite");
  }
}

double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& y) {
  check_dims(x.size(), y.size());
  if (spec.metric() == MetricKind::kMahalanobis) check_dims(x.size(), spec.whitening().rows());
  double sq = 0.0;
  double dot = 0.0;
  if (uses_distance(spec.family())) {
    if (spec.metric() == MetricKind::kMahalanobis) {
      sq = (spec.whitening().transpose() * (x - y)).squaredNorm();
    } else {
      sq = (x - y).squaredNorm();
    }
  } else {
    dot = x.dot(y);
  }
  return apply_family(spec, sq, dot);
}

Matrix pairwise_sq_distances(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  check_dims(a.cols(), b.cols());
  if (spec.metric() == MetricKind::kMahalanobis) check_dims(a.cols(), spec.whitening().rows());
  return sq_distances_whitened(whiten(spec, a), whiten(spec, b));
}

Matrix gram(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  check_dims(a.cols(), b.cols());
  if (uses_distance(spec.family())) {
    Matrix d = pairwise_sq_distances(spec, a, b);
    if (spec.family() == KernelFamily::kRbf) {
      const double scale = -0.5 * spec.beta_value();
      return (scale * d.array()).unaryExpr([](double v) { return std::exp(v); }).matrix();
    }
    return (0.75 * (1.0 - d.array()).max(0.0)).matrix();
  }
  Matrix dots = dot_products(a, b);
  if (spec.family() == KernelFamily::kPolynomial) {
    return dots.unaryExpr([deg = spec.degree()](double v) { return std::pow(v, deg); });
  }
  return dots;
}

Matrix gram(const KernelSpec& spec, const FeatureSet& a, const FeatureSet& b) {
  return gram(spec, a.data, b.data);
}

Vector kernel_row(const KernelSpec& spec, const Vector& x, const FeatureSet& support) {
  return gram(spec, Matrix(x.transpose()), support.data).row(0).transpose();
}

double median_heuristic_beta(const KernelSpec& spec, const Matrix& points) {
  if (points.rows() < 2) {
    throw Error(ErrorCode::kInvalidKernel, "median heuristic needs at least two points");
  }
  Matrix sample = points;
  if (points.rows() > kMedianRows) {
    // Deterministic strided subsample.
    sample.resize(kMedianRows, points.cols());
    for (Index i = 0; i < kMedianRows; ++i) {
      sample.row(i) = points.row(i * points.rows() / kMedianRows);
    }
  }
  const Matrix d = pairwise_sq_distances(spec, sample, sample);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(d.rows() * (d.rows() - 1) / 2));
  for (Index i = 0; i < d.rows(); ++i) {
    for (Index j = i + 1; j < d.cols(); ++j) values.push_back(d(i, j));
  }
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double median = values[mid];
  if (values.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(values.begin(),
                                               values.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  if (!(median > 0.0)) {
    throw Error(ErrorCode::kInvalidKernel, "median pairwise distance is zero; set beta explicitly");
  }
  return 1.0 / median;
}

KernelSpec resolve_kernel(const KernelSpec& spec, const FeatureSet& support) {
  spec.validate();
  KernelSpec out = spec;
  if (spec.metric() == MetricKind::kMahalanobis && !spec.precision()) {
    const PrecisionEstimate est = estimate_precision(support, spec.shrinkage());
    out = KernelSpec::rbf_mahalanobis(spec.beta(), est.precision, spec.shrinkage());
  }
  if (out.family() == KernelFamily::kRbf && !out.beta()) {
    out = out.with_beta(median_heuristic_beta(out, support.data));
  }
  if (out.metric() == MetricKind::kMahalanobis && out.whitening().rows() != support.dim()) {
    throw Error(ErrorCode::kDimMismatch, "precision matrix dim differs from feature dim");
  }
  return out;
}

}  // namespace proker
