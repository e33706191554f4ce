#pragma once

#include <optional>
#include <string>

#include "proker/featurestore.hpp"

namespace proker {

enum class KernelFamily { kRbf, kLinear, kPolynomial, kEpanechnikov };
enum class MetricKind { kEuclidean, kMahalanobis };

std::string to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string& name);

/// A kernel from the zoo plus its metric.
///
///   RBF           exp(-beta/2 * d(x,y)^2)
///   Linear        x . y
///   Polynomial    (x . y)^degree              (homogeneous)
///   Epanechnikov  3/4 * max(0, 1 - |x-y|^2)
///
/// The (beta/2)^D normalizer of the density-style RBF is not applied; it
/// cancels in ratio estimators and is absorbed by lambda/alpha elsewhere.
///
/// `beta` may be left unset, in which case resolve_kernel() fills it with the
/// median heuristic on the support set. A Mahalanobis metric either carries a
/// precision matrix or a shrinkage value to estimate one from the support.
class KernelSpec {
 public:
  KernelSpec() = default;

  static KernelSpec rbf(std::optional<double> beta = std::nullopt);
  static KernelSpec linear();
  static KernelSpec polynomial(int degree = 2);
  static KernelSpec epanechnikov();
  /// RBF under d(x,y)^2 = (x-y)^T P (x-y). Throws InvalidKernel unless P is SPD.
  static KernelSpec rbf_mahalanobis(std::optional<double> beta, const Matrix& precision,
                                    double shrinkage = 0.1);
  /// RBF whose precision is estimated from the support at resolve time.
  static KernelSpec rbf_mahalanobis_shrunk(std::optional<double> beta, double shrinkage);

  KernelFamily family() const { return family_; }
  MetricKind metric() const { return metric_; }
  std::optional<double> beta() const { return beta_; }
  int degree() const { return degree_; }
  const std::optional<Matrix>& precision() const { return precision_; }
  double shrinkage() const { return shrinkage_; }

  /// Beta or throws InvalidKernel if still unresolved.
  double beta_value() const;
  KernelSpec with_beta(double beta) const;

  /// Whitening map: squared metric distance equals |W^T x - W^T y|^2.
  /// Only meaningful for a Mahalanobis metric with a precision matrix.
  const Matrix& whitening() const { return whitening_; }

  /// True once beta (RBF) and precision (Mahalanobis) are concrete.
  bool is_resolved() const;

  /// Throws InvalidKernel on inconsistent parameters.
  void validate() const;

  nlohmann::json to_json() const;
  static KernelSpec from_json(const nlohmann::json& j);

 private:
  KernelFamily family_ = KernelFamily::kRbf;
  MetricKind metric_ = MetricKind::kEuclidean;
  std::optional<double> beta_;
  int degree_ = 2;
  double shrinkage_ = 0.1;
  std::optional<Matrix> precision_;
  Matrix whitening_;
};

/// Separable output matrix B of the multi-output kernel k(x,y) * B.
struct OutputKernel {
  Matrix matrix_b;

  static OutputKernel identity(Index num_classes) { return {Matrix::Identity(num_classes, num_classes)}; }
  bool is_identity() const { return matrix_b.isIdentity(0.0); }
  /// Throws InvalidKernel unless symmetric and PSD (1e-10 tolerances).
  void validate() const;
};

double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& y);

/// values(i, j) = k(a_i, b_j). Rows of `a` are processed in fixed-size blocks
/// so the result does not depend on the worker count.
Matrix gram(const KernelSpec& spec, const Matrix& a, const Matrix& b);
Matrix gram(const KernelSpec& spec, const FeatureSet& a, const FeatureSet& b);

/// Kernel values between one query and every support row.
Vector kernel_row(const KernelSpec& spec, const Vector& x, const FeatureSet& support);

/// Squared distances under the spec's metric, same blocking as gram().
Matrix pairwise_sq_distances(const KernelSpec& spec, const Matrix& a, const Matrix& b);

/// 1 / median of pairwise squared distances over i < j (metric-aware).
double median_heuristic_beta(const KernelSpec& spec, const Matrix& points);

/// Fills an unset beta and estimates a shrunk precision when requested.
KernelSpec resolve_kernel(const KernelSpec& spec, const FeatureSet& support);

}  // namespace proker
