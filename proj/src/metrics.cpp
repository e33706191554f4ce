#include "proker/metrics.hpp"

#include <sstream>

#include "proker/error.hpp"

namespace proker {

namespace {
constexpr double kRelativePivot = 1e-12;
}

PrecisionEstimate estimate_precision(const FeatureSet& support, double shrinkage) {
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "shrinkage must lie in [0, 1]");
  }
  if (support.rows() < 2) {
    throw Error(ErrorCode::kSingularCovariance, "need at least two support rows");
  }
  const Index dim = support.dim();
  const int groups = support.has_labels() ? std::max(support.num_classes, 1) : 1;

  Matrix means = Matrix::Zero(groups, dim);
  Vector counts = Vector::Zero(groups);
  for (Index i = 0; i < support.rows(); ++i) {
    const int g = support.has_labels() ? support.labels[static_cast<std::size_t>(i)] : 0;
    means.row(g) += support.data.row(i);
    counts[g] += 1.0;
  }
  Index present = 0;
  for (int g = 0; g < groups; ++g) {
    if (counts[g] > 0) {
      means.row(g) /= counts[g];
      ++present;
    }
  }
  const Index dof = support.rows() - present;
  if (dof < 1) {
    throw Error(ErrorCode::kSingularCovariance,
                "one sample per class leaves no within-class scatter");
  }

  Matrix centered(support.rows(), dim);
  for (Index i = 0; i < support.rows(); ++i) {
    const int g = support.has_labels() ? support.labels[static_cast<std::size_t>(i)] : 0;
    centered.row(i) = support.data.row(i) - means.row(g);
  }
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(dof);
  const double target = cov.trace() / static_cast<double>(dim);
  Matrix shrunk = (1.0 - shrinkage) * cov;
  shrunk.diagonal().array() += shrinkage * target;

  // Pivots at round-off level relative to the largest variance mean the
  // factorization only succeeded by accident.
  Eigen::LLT<Matrix> llt(shrunk);
  const double scale = shrunk.diagonal().maxCoeff();
  const bool singular = llt.info() != Eigen::Success || !(scale > 0.0) ||
                        Matrix(llt.matrixL()).diagonal().array().square().minCoeff() <
                            kRelativePivot * scale;
  if (singular) {
    std::ostringstream msg;
    msg << "covariance is singular at shrinkage " << shrinkage << " (" << support.rows()
        << " rows, dim " << dim << "); try a larger shrinkage such as 0.1";
    throw Error(ErrorCode::kSingularCovariance, msg.str());
  }
  PrecisionEstimate out;
  out.precision = llt.solve(Matrix::Identity(dim, dim));
  out.precision = 0.5 * (out.precision + out.precision.transpose());
  out.shrinkage = shrinkage;
  out.source_rows = support.rows();
  return out;
}

double mahalanobis_sq(const PrecisionEstimate& p, const Vector& x, const Vector& y) {
  if (x.size() != y.size() || x.size() != p.precision.rows()) {
    throw Error(ErrorCode::kDimMismatch, "vector dims differ from precision matrix");
  }
  const Vector d = x - y;
  return std::max(0.0, d.dot(p.precision * d));
}

}  // namespace proker
