#include "proker/adapters.hpp"

#include <cmath>

#include "proker/error.hpp"
#include "proker/parallel.hpp"

namespace proker {

namespace {

constexpr Index kQueryChunk = 1024;
constexpr double kJitterEscalation = 100.0;

void check_inputs(const FeatureSet& support, const Matrix& targets, const TextClassifier& text,
                  const FeatureSet& queries) {
  if (support.dim() != queries.dim() || support.dim() != text.dim()) {
    throw Error(ErrorCode::kDimMismatch, "support dim " + std::to_string(support.dim()) +
                                             ", query dim " + std::to_string(queries.dim()) +
                                             ", text dim " + std::to_string(text.dim()));
  }
  if (targets.rows() != support.rows()) {
    throw Error(ErrorCode::kDimMismatch, "target rows differ from support rows");
  }
  if (targets.cols() != text.num_classes()) {
    throw Error(ErrorCode::kDimMismatch, "target columns differ from classifier classes");
  }
}

// Runs fn(first_row, kernel_block, base_logits_block) over query chunks and
// stitches the returned logits together.
template <typename Fn>
Logits chunked(const FeatureSet& queries, const KernelSpec& kernel, const FeatureSet& support,
               const TextClassifier& text, double text_scale, Fn&& fn) {
  Logits out(queries.rows(), text.num_classes());
  for (Index r0 = 0; r0 < queries.rows(); r0 += kQueryChunk) {
    const Index nr = std::min(kQueryChunk, queries.rows() - r0);
    const Matrix block = queries.data.middleRows(r0, nr);
    const Matrix k = gram(kernel, block, support.data);
    const Matrix base = text_scale * text.apply(block);
    out.middleRows(r0, nr) = fn(r0, block, k, base);
  }
  return out;
}

Matrix augment(const Matrix& m) {
  Matrix out(m.rows(), m.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(m.cols()) = m;
  return out;
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kZeroShot: return "zeroshot";
    case Method::kTip: return "tip";
    case Method::kProximalNW: return "nw";
    case Method::kLLR: return "llr";
    case Method::kProKeR: return "proker";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "zeroshot" || name == "zero_shot" || name == "zs") return Method::kZeroShot;
  if (name == "tip") return Method::kTip;
  if (name == "nw" || name == "proximal_nw" || name == "proximalnw") return Method::kProximalNW;
  if (name == "llr") return Method::kLLR;
  if (name == "proker") return Method::kProKeR;
  throw Error(ErrorCode::kInvalidConfig, "unknown method '" + name + "'");
}

void AdapterConfig::validate() const {
  kernel.validate();
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) {
    throw Error(ErrorCode::kInvalidConfig, "jitter must be non-negative");
  }
  if (!std::isfinite(text_scale)) throw Error(ErrorCode::kInvalidConfig, "text scale must be finite");
  const std::string name = to_string(method);
  switch (method) {
    case Method::kZeroShot: break;
    case Method::kTip:
      if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw Error(ErrorCode::kInvalidConfig, "alpha must be non-negative for tip");
      }
      if (kernel.family() != KernelFamily::kRbf) {
        throw Error(ErrorCode::kInvalidConfig, "tip requires the rbf kernel");
      }
      break;
    case Method::kLLR:
      if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorCode::kInvalidConfig, "lambda must be non-negative for llr");
      }
      break;
    case Method::kProximalNW:
    case Method::kProKeR:
      if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorCode::kInvalidConfig, "lambda must be positive for " + name);
      }
      break;
  }
  if (output_kernel) output_kernel->validate();
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), 0);
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

Logits zero_shot(const TextClassifier& text, const FeatureSet& queries, double text_scale) {
  return text_scale * text.apply(queries.data);
}

Logits tip_predict(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
                   const TextClassifier& text, const FeatureSet& queries) {
  AdapterConfig c = cfg;
  c.method = Method::kTip;
  c.validate();
  check_inputs(support, targets, text, queries);
  const KernelSpec kernel = resolve_kernel(cfg.kernel, support);
  return chunked(queries, kernel, support, text, cfg.text_scale,
                 [&](Index, const Matrix&, const Matrix& k, const Matrix& base) -> Matrix {
                   return base + cfg.alpha * (k * targets);
                 });
}

Logits proximal_nw_predict(const AdapterConfig& cfg, const FeatureSet& support,
                           const Matrix& targets, const TextClassifier& text,
                           const FeatureSet& queries) {
  AdapterConfig c = cfg;
  c.method = Method::kProximalNW;
  c.validate();
  check_inputs(support, targets, text, queries);
  const KernelSpec kernel = resolve_kernel(cfg.kernel, support);
  const double pull = cfg.lambda * static_cast<double>(support.rows());
  return chunked(queries, kernel, support, text, cfg.text_scale,
                 [&](Index, const Matrix&, const Matrix& k, const Matrix& base) -> Matrix {
                   const Vector z = k.rowwise().sum();
                   // f + (kL - z f) / (pull + z): exactly f when no support point is in range
                   Matrix out = k * targets - z.asDiagonal() * base;
                   for (Index i = 0; i < out.rows(); ++i) out.row(i) /= (pull + z[i]);
                   return base + out;
                 });
}

namespace detail {

Vector llr_single(const Matrix& support_aug, const Vector& weights, const Matrix& targets,
                  const Vector& query_aug, const Vector& base_logits, double proximal,
                  double jitter) {
  // A = M + c u u^T with M = S~^T W S~ + jitter I, u = x~^T, c = lambda NK.
  // Sherman-Morrison gives x~ A^-1 B = (u^T M^-1 b0 + c q f) / (1 + c q)
  // with b0 = S~^T W L and q = u^T M^-1 u, which stays accurate when c is
  // many orders of magnitude above the spectrum of M.
  const Matrix weighted = support_aug.transpose() * weights.asDiagonal();
  Matrix m = weighted * support_aug;
  const Matrix b0 = weighted * targets;
  const Index n = m.rows();

  double boost = jitter;
  for (int attempt = 0; attempt < 2; ++attempt, boost *= kJitterEscalation) {
    Matrix a = m;
    a.diagonal().array() += boost;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) continue;
    const Vector mu = llt.solve(query_aug);
    const Matrix mb = llt.solve(b0);
    const double q = query_aug.dot(mu);
    const Vector num = (query_aug.transpose() * mb).transpose() + proximal * q * base_logits;
    const Vector out = num / (1.0 + proximal * q);
    if (out.allFinite()) return out;
  }
  throw Error(ErrorCode::kSingularSystem,
              "local linear system of size " + std::to_string(n) + " is singular after jitter");
}

}  // namespace detail

Logits llr_predict(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
                   const TextClassifier& text, const FeatureSet& queries) {
  AdapterConfig c = cfg;
  c.method = Method::kLLR;
  c.validate();
  check_inputs(support, targets, text, queries);
  const KernelSpec kernel = resolve_kernel(cfg.kernel, support);
  const Matrix support_aug = augment(support.data);
  const double pull = cfg.lambda * static_cast<double>(support.rows());
  return chunked(queries, kernel, support, text, cfg.text_scale,
                 [&](Index, const Matrix& block, const Matrix& k, const Matrix& base) -> Matrix {
                   Matrix out(block.rows(), targets.cols());
                   const Matrix block_aug = augment(block);
                   parallel_for(static_cast<std::size_t>(block.rows()), [&](std::size_t qi) {
                     const auto i = static_cast<Index>(qi);
                     out.row(i) = detail::llr_single(support_aug, k.row(i).transpose(), targets,
                                                     block_aug.row(i).transpose(),
                                                     base.row(i).transpose(), pull, cfg.jitter)
                                      .transpose();
                   });
                   return out;
                 });
}

Matrix solve_proximal_dual(const Matrix& gram_matrix, const Matrix& rhs, double lambda,
                           double jitter, double* used_jitter) {
  const Index n = gram_matrix.rows();
  double boost = jitter;
  for (int attempt = 0; attempt < 2; ++attempt, boost *= kJitterEscalation) {
    Matrix a = gram_matrix / lambda;
    a.diagonal().array() += 1.0 + boost;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) continue;
    Matrix x = llt.solve(rhs) / lambda;
    if (!x.allFinite()) continue;
    if (used_jitter) *used_jitter = boost;
    return x;
  }
  throw Error(ErrorCode::kSolveFailed,
              "proximal kernel system of size " + std::to_string(n) + " is not positive definite");
}

ProKeRModel proker_fit(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
                       const TextClassifier& text) {
  AdapterConfig c = cfg;
  c.method = Method::kProKeR;
  c.validate();
  check_inputs(support, targets, text, support);

  ProKeRModel model;
  model.kernel = resolve_kernel(cfg.kernel, support);
  model.support = support;
  model.text = text;
  model.lambda = cfg.lambda;
  model.text_scale = cfg.text_scale;

  const Matrix k = gram(model.kernel, support.data, support.data);
  const Matrix residual = targets - cfg.text_scale * text.apply(support.data);

  if (!cfg.output_kernel || cfg.output_kernel->is_identity()) {
    model.gamma = solve_proximal_dual(k, residual, cfg.lambda, cfg.jitter, &model.jitter);
    return model;
  }

  // Separable kernel k(x,y) B with B = U diag(mu) U^T: in the rotated output
  // basis each column j solves (mu_j K + lambda I) c_j = r_j independently.
  const Matrix& b = cfg.output_kernel->matrix_b;
  if (b.rows() != targets.cols()) {
    throw Error(ErrorCode::kDimMismatch, "output kernel size differs from class count");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
  const Matrix& u = eig.eigenvectors();
  const Matrix rotated = residual * u;
  Matrix coeff(rotated.rows(), rotated.cols());
  double used = cfg.jitter;
  for (Index j = 0; j < rotated.cols(); ++j) {
    const double mu = std::max(0.0, eig.eigenvalues()[j]);
    coeff.col(j) = solve_proximal_dual(mu * k, rotated.col(j), cfg.lambda, cfg.jitter, &used);
    model.jitter = std::max(model.jitter, used);
  }
  model.gamma = coeff * u.transpose() * b;
  return model;
}

Logits proker_predict(const ProKeRModel& model, const FeatureSet& queries) {
  if (queries.dim() != model.support.dim()) {
    throw Error(ErrorCode::kDimMismatch, "query dim differs from model support dim");
  }
  return chunked(queries, model.kernel, model.support, model.text, model.text_scale,
                 [&](Index, const Matrix&, const Matrix& k, const Matrix& base) -> Matrix {
                   return base + k * model.gamma;
                 });
}

double proker_residual(const ProKeRModel& model, const Matrix& targets) {
  const Matrix k = gram(model.kernel, model.support.data, model.support.data);
  const Matrix residual = targets - model.text_scale * model.text.apply(model.support.data);
  Matrix lhs = k * model.gamma + model.lambda * (1.0 + model.jitter) * model.gamma;
  return (lhs - residual).cwiseAbs().maxCoeff();
}

Logits predict(const AdapterConfig& cfg, const FewShotTask& task) {
  return predict(cfg, task.support, task.text, task.query);
}

Logits predict(const AdapterConfig& cfg, const FeatureSet& support, const TextClassifier& text,
               const FeatureSet& queries) {
  if (cfg.method == Method::kZeroShot) {
    cfg.validate();
    return zero_shot(text, queries, cfg.text_scale);
  }
  const Matrix targets = one_hot(support).values;
  switch (cfg.method) {
    case Method::kTip: return tip_predict(cfg, support, targets, text, queries);
    case Method::kProximalNW: return proximal_nw_predict(cfg, support, targets, text, queries);
    case Method::kLLR: return llr_predict(cfg, support, targets, text, queries);
    case Method::kProKeR: return proker_predict(proker_fit(cfg, support, targets, text), queries);
    case Method::kZeroShot: break;
  }
  return {};
}

}  // namespace proker
