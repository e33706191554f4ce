#pragma once

#include <optional>
#include <string>
#include <vector>

#include "proker/featurestore.hpp"
#include "proker/kernels.hpp"

namespace proker {

enum class Method { kZeroShot, kTip, kProximalNW, kLLR, kProKeR };

std::string to_string(Method method);
/// Accepts "zeroshot", "tip", "nw", "llr", "proker" (and a few aliases).
Method method_from_string(const std::string& name);

struct AdapterConfig {
  Method method = Method::kProKeR;
  KernelSpec kernel = KernelSpec::rbf();
  double lambda = 1.0;  // proximal weight; never pre-multiplied by NK
  double alpha = 1.0;   // Tip cache blend
  double jitter = 1e-8;
  /// Constant applied to the base logits x * W before any blending.
  double text_scale = 1.0;
  /// Separable output kernel; identity when unset.
  std::optional<OutputKernel> output_kernel;

  /// Throws InvalidConfig when lambda/alpha/jitter violate the method's domain.
  void validate() const;
};

/// Query-by-class score matrix.
using Logits = Matrix;

/// Fitted proximal kernel ridge regressor:
///   phi(x) = f(x) + k(x, S) * gamma
/// where gamma solves (K + lambda * (1 + jitter) * I) gamma = L - f(S),
/// i.e. gamma = (1/lambda) * (I + K/lambda + jitter I)^-1 (L - f(S)).
/// This is the exact minimizer of
///   sum_i |phi(S_i) - L_i|^2 + lambda |phi - f|_H^2.
struct ProKeRModel {
  FeatureSet support;
  Matrix gamma;  // NK x N
  KernelSpec kernel;
  TextClassifier text;
  double lambda = 1.0;
  double jitter = 1e-8;  // jitter actually used (after escalation)
  double text_scale = 1.0;
};

/// Index of the largest entry per row, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& logits);

Logits zero_shot(const TextClassifier& text, const FeatureSet& queries, double text_scale = 1.0);

/// f(x) + alpha * sum_i exp(-beta/2 |S_i - x|^2) L_i
Logits tip_predict(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
                   const TextClassifier& text, const FeatureSet& queries);

/// (lambda NK f(x) + sum_i k_i L_i) / (lambda NK + Z(x)),  Z(x) = sum_i k_i
Logits proximal_nw_predict(const AdapterConfig& cfg, const FeatureSet& support,
                           const Matrix& targets, const TextClassifier& text,
                           const FeatureSet& queries);

/// Local linear fit around every query, pulled toward f(x):
///   A = S~^T W S~ + lambda NK x~^T x~ + jitter I
///   B = S~^T W L  + lambda NK x~^T f(x)
///   phi(x) = x~ A^-1 B,   x~ = [1 x],  W = diag(k(x, S_i))
/// One (D+1)x(D+1) factorization per query. Throws SingularSystem.
Logits llr_predict(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
                   const TextClassifier& text, const FeatureSet& queries);

/// Throws SolveFailed when the system stays indefinite after one jitter
/// escalation (x100).
ProKeRModel proker_fit(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
                       const TextClassifier& text);
Logits proker_predict(const ProKeRModel& model, const FeatureSet& queries);

/// Solves (I + gram/lambda + jitter I) X = rhs and returns X / lambda,
/// escalating jitter once. Shared by the exact and random-feature fits.
/// `used_jitter` receives the jitter that succeeded.
Matrix solve_proximal_dual(const Matrix& gram, const Matrix& rhs, double lambda, double jitter,
                           double* used_jitter = nullptr);

/// Uniform entry point: one-hot targets from the support labels, then the
/// method-specific estimator.
Logits predict(const AdapterConfig& cfg, const FewShotTask& task);
/// Same dispatch for an arbitrary query split (e.g. a validation set).
Logits predict(const AdapterConfig& cfg, const FeatureSet& support, const TextClassifier& text,
               const FeatureSet& queries);

/// Residual max-norm of the ProKeR normal equations for a fitted model.
double proker_residual(const ProKeRModel& model, const Matrix& targets);

namespace detail {
/// Closed-form LLR for a single query with explicit sample weights.
/// Exposed for tests that need weights no kernel produces (e.g. uniform).
Vector llr_single(const Matrix& support_aug, const Vector& weights, const Matrix& targets,
                  const Vector& query_aug, const Vector& base_logits, double proximal,
                  double jitter);
}  // namespace detail

}  // namespace proker
