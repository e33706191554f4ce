#pragma once

#include <cstdint>

#include "proker/adapters.hpp"

namespace proker {

/// Random Fourier features for exp(-beta/2 |x-y|^2):
///   psi(x) = sqrt(2/R) cos(W x + b),  W rows ~ N(0, beta I),  b ~ U[0, 2pi).
/// psi(x) . psi(y) is an unbiased estimate of the kernel.
struct FourierMap {
  Matrix frequencies;  // R x D
  Vector phases;       // R
  double beta = 1.0;
  bool orthogonal = false;
  std::uint64_t seed = 0;

  Index count() const { return frequencies.rows(); }
  Index dim() const { return frequencies.cols(); }
};

/// With `orthogonal`, frequencies come in D x D blocks whose rows are
/// orthogonal (QR of a Gaussian block) and rescaled by independent chi(D)
/// norms; the last block is truncated when R is not a multiple of D.
FourierMap build_fourier_map(Index dim, Index count, double beta, bool orthogonal,
                             std::uint64_t seed);

Vector featurize(const FourierMap& map, const Vector& x);
/// Row-wise featurization of a batch.
Matrix featurize(const FourierMap& map, const Matrix& rows);

/// ProKeR under the approximate kernel psi(x).psi(y), still holding the support.
struct ApproxKernelModel {
  Matrix support_features;  // NK x R
  Matrix gamma;             // NK x N
  FourierMap map;
  TextClassifier text;
  double lambda = 1.0;
  double text_scale = 1.0;
};

/// Class prototypes psi(S)^T gamma; predictions no longer need the support.
struct PrototypeModel {
  Matrix prototypes;  // R x N
  FourierMap map;
  TextClassifier text;
  double lambda = 1.0;
  double text_scale = 1.0;
};

/// Refits the dual coefficients of `model` under the map's approximate
/// kernel. Throws UnsupportedKernel for non-Euclidean-RBF models and
/// BetaMismatch when the map was drawn for another bandwidth.
ApproxKernelModel fit_approximate(const ProKeRModel& model, const FourierMap& map);
Logits approximate_predict(const ApproxKernelModel& model, const FeatureSet& queries);

PrototypeModel compress(const ProKeRModel& model, const FourierMap& map);
PrototypeModel compress(const ApproxKernelModel& model);
Logits prototype_predict(const PrototypeModel& model, const FeatureSet& queries);

}  // namespace proker
