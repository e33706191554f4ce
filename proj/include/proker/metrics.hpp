#pragma once

#include "proker/featurestore.hpp"

namespace proker {

/// Shrunk inverse of the pooled within-class covariance of a support set.
struct PrecisionEstimate {
  Matrix precision;
  double shrinkage = 0.1;
  Index source_rows = 0;
};

/// precision = ((1 - e) * C + e * tr(C)/D * I)^-1, where C is the covariance
/// pooled over classes: rows are centered on their class mean and the
/// scatter is divided by rows - num_classes. An unlabeled support counts as
/// a single class. Throws SingularCovariance when the shrunk matrix has no
/// Cholesky factor.
PrecisionEstimate estimate_precision(const FeatureSet& support, double shrinkage = 0.1);

/// (x - y)^T P (x - y)
double mahalanobis_sq(const PrecisionEstimate& p, const Vector& x, const Vector& y);

}  // namespace proker
