#include "proker/spectral.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "proker/error.hpp"
#include "proker/parallel.hpp"

namespace proker {

namespace {

constexpr double kBetaTolerance = 1e-12;

Matrix gaussian_block(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

// Residual targets L - f(S) the model was fit against.
Matrix model_residual(const ProKeRModel& model) {
  const Matrix base = model.text_scale * model.text.apply(model.support.data);
  if (model.support.has_labels()) return one_hot(model.support).values - base;
  // Unlabeled (regression) supports: recover from the normal equations.
  const Matrix k = gram(model.kernel, model.support.data, model.support.data);
  return k * model.gamma + model.lambda * (1.0 + model.jitter) * model.gamma;
}

}  // namespace

FourierMap build_fourier_map(Index dim, Index count, double beta, bool orthogonal,
                             std::uint64_t seed) {
  if (dim < 1 || count < 1) throw Error(ErrorCode::kInvalidConfig, "feature map needs R, D >= 1");
  if (!(beta > 0.0)) throw Error(ErrorCode::kInvalidKernel, "RBF beta must be positive");

  FourierMap map;
  map.beta = beta;
  map.orthogonal = orthogonal;
  map.seed = seed;
  std::mt19937_64 rng(seed);
  const double sigma = std::sqrt(beta);

  if (!orthogonal) {
    map.frequencies = sigma * gaussian_block(rng, count, dim);
  } else {
    map.frequencies.resize(count, dim);
    for (Index r0 = 0; r0 < count; r0 += dim) {
      const Index rows = std::min(dim, count - r0);
      const Matrix g = gaussian_block(rng, dim, dim);
      Eigen::HouseholderQR<Matrix> qr(g);
      const Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
      // Chi(D) norms: lengths of fresh Gaussian vectors.
      const Vector norms = gaussian_block(rng, rows, dim).rowwise().norm();
      for (Index i = 0; i < rows; ++i) {
        map.frequencies.row(r0 + i) = sigma * norms[i] * q.col(i).transpose();
      }
    }
  }

  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  map.phases.resize(count);
  for (Index i = 0; i < count; ++i) map.phases[i] = uniform(rng);
  return map;
}

Matrix featurize(const FourierMap& map, const Matrix& rows) {
  if (rows.cols() != map.dim()) {
    throw Error(ErrorCode::kDimMismatch, "input dim " + std::to_string(rows.cols()) +
                                             " vs map dim " + std::to_string(map.dim()));
  }
  const double scale = std::sqrt(2.0 / static_cast<double>(map.count()));
  Matrix proj = rows * map.frequencies.transpose();
  proj.rowwise() += map.phases.transpose();
  return scale * proj.array().cos().matrix();
}

Vector featurize(const FourierMap& map, const Vector& x) {
  return featurize(map, Matrix(x.transpose())).row(0).transpose();
}

ApproxKernelModel fit_approximate(const ProKeRModel& model, const FourierMap& map) {
  if (model.kernel.family() != KernelFamily::kRbf ||
      model.kernel.metric() != MetricKind::kEuclidean) {
    throw Error(ErrorCode::kUnsupportedKernel,
                "random Fourier compression needs a Euclidean RBF model");
  }
  const double beta = model.kernel.beta_value();
  if (std::abs(beta - map.beta) > kBetaTolerance * beta) {
    throw Error(ErrorCode::kBetaMismatch, "model beta " + std::to_string(beta) +
                                              " vs feature map beta " + std::to_string(map.beta));
  }
  ApproxKernelModel out;
  out.support_features = featurize(map, model.support.data);
  out.map = map;
  out.text = model.text;
  out.lambda = model.lambda;
  out.text_scale = model.text_scale;
  const Matrix k_hat = out.support_features * out.support_features.transpose();
  out.gamma = solve_proximal_dual(k_hat, model_residual(model), model.lambda, model.jitter);
  return out;
}

Logits approximate_predict(const ApproxKernelModel& model, const FeatureSet& queries) {
  const Matrix psi = featurize(model.map, queries.data);
  const Matrix k_hat = psi * model.support_features.transpose();
  return model.text_scale * model.text.apply(queries.data) + k_hat * model.gamma;
}

PrototypeModel compress(const ApproxKernelModel& model) {
  PrototypeModel out;
  out.prototypes = model.support_features.transpose() * model.gamma;
  out.map = model.map;
  out.text = model.text;
  out.lambda = model.lambda;
  out.text_scale = model.text_scale;
  return out;
}

PrototypeModel compress(const ProKeRModel& model, const FourierMap& map) {
  return compress(fit_approximate(model, map));
}

Logits prototype_predict(const PrototypeModel& model, const FeatureSet& queries) {
  return model.text_scale * model.text.apply(queries.data) +
         featurize(model.map, queries.data) * model.prototypes;
}

}  // namespace proker
