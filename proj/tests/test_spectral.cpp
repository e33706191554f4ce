#include <gtest/gtest.h>

#include "oracles.hpp"
#include "proker/container.hpp"
#include "proker/error.hpp"
#include "proker/harness.hpp"
#include "proker/spectral.hpp"

using namespace proker;

namespace {

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

ProKeRModel fitted(std::mt19937_64& rng, Index nk, Index dim, int classes, double beta,
                   double lambda = 0.5) {
  const FeatureSet s = oracle::labeled(oracle::unit_rows(nk, dim, rng), classes);
  AdapterConfig c;
  c.method = Method::kProKeR;
  c.kernel = KernelSpec::rbf(beta);
  c.lambda = lambda;
  return proker_fit(c, s, one_hot(s).values, oracle::text(oracle::gaussian(dim, classes, rng) * 0.2));
}

double mean_kernel_error(const FourierMap& map, const Matrix& x, const Matrix& y, double beta) {
  const Matrix px = featurize(map, x), py = featurize(map, y);
  double err = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    err += std::abs(px.row(i).dot(py.row(i)) - std::exp(-0.5 * beta * (x.row(i) - y.row(i)).squaredNorm()));
  }
  return err / static_cast<double>(x.rows());
}

}  // namespace

TEST(FourierMapBuild, DeterministicForSeed) {
  const FourierMap a = build_fourier_map(5, 40, 2.0, false, 9);
  const FourierMap b = build_fourier_map(5, 40, 2.0, false, 9);
  EXPECT_TRUE(a.frequencies == b.frequencies);
  EXPECT_TRUE(a.phases == b.phases);
  EXPECT_FALSE(build_fourier_map(5, 40, 2.0, false, 10).frequencies == a.frequencies);
}

TEST(FourierMapBuild, OrthogonalBlocks) {
  const FourierMap m = build_fourier_map(6, 6, 3.0, true, 1);
  const Matrix g = m.frequencies * m.frequencies.transpose();
  EXPECT_LE(max_abs(g - Matrix(g.diagonal().asDiagonal())), 1e-8);

  const FourierMap partial = build_fourier_map(4, 10, 1.0, true, 2);
  ASSERT_EQ(partial.count(), 10);
  for (Index start : {0, 4, 8}) {
    const Index n = std::min<Index>(4, 10 - start);
    const Matrix block = partial.frequencies.middleRows(start, n);
    const Matrix bg = block * block.transpose();
    EXPECT_LE(max_abs(bg - Matrix(bg.diagonal().asDiagonal())), 1e-8);
  }
}

TEST(FourierMapBuild, FrequencyVarianceMatchesBeta) {
  for (bool orthogonal : {false, true}) {
    const FourierMap m = build_fourier_map(4, 100000, 2.0, orthogonal, 3);
    const double mean = m.frequencies.mean();
    const double var = (m.frequencies.array() - mean).square().mean();
    EXPECT_NEAR(var, 2.0, 0.1) << orthogonal;
    EXPECT_GE(m.phases.minCoeff(), 0.0);
    EXPECT_LT(m.phases.maxCoeff(), 2.0 * M_PI);
  }
}

TEST(FourierMapBuild, RejectsBadArguments) {
  EXPECT_THROW(build_fourier_map(0, 4, 1.0, false, 0), Error);
  EXPECT_THROW(build_fourier_map(3, 0, 1.0, false, 0), Error);
  EXPECT_THROW(build_fourier_map(3, 4, 0.0, false, 0), Error);
}

TEST(Featurize, SelfKernelNearOne) {
  std::mt19937_64 rng(4);
  const FourierMap m = build_fourier_map(8, 4096, 2.0, false, 4);
  const Matrix x = oracle::unit_rows(10, 8, rng);
  const Matrix p = featurize(m, x);
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(p.row(i).squaredNorm(), 1.0, 0.05);
}

TEST(Featurize, ApproximatesRbf) {
  std::mt19937_64 rng(5);
  const FourierMap m = build_fourier_map(8, 2048, 4.0, false, 5);
  const Matrix x = oracle::unit_rows(100, 8, rng), y = oracle::unit_rows(100, 8, rng);
  EXPECT_LT(mean_kernel_error(m, x, y, 4.0), 0.03);
}

TEST(Featurize, PureAndConsistentWithBatch) {
  std::mt19937_64 rng(6);
  const FourierMap m = build_fourier_map(5, 64, 1.0, true, 6);
  const Matrix x = oracle::unit_rows(7, 5, rng);
  const Matrix batch = featurize(m, x);
  EXPECT_TRUE(batch == featurize(m, x));
  for (Index i = 0; i < 7; ++i) {
    EXPECT_LE((featurize(m, Vector(x.row(i).transpose())) - batch.row(i).transpose()).cwiseAbs().maxCoeff(),
              1e-15);
  }
  EXPECT_THROW(featurize(m, Matrix(Matrix::Ones(2, 4))), Error);
}

TEST(Featurize, ErrorShrinksWithFeatureCount) {
  std::mt19937_64 rng(7);
  const Matrix x = oracle::unit_rows(200, 8, rng), y = oracle::unit_rows(200, 8, rng);
  double previous = std::numeric_limits<double>::infinity();
  for (Index r : {64, 256, 1024, 4096}) {
    double err = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      err += mean_kernel_error(build_fourier_map(8, r, 4.0, false, 100 + seed), x, y, 4.0);
    }
    err /= 20.0;
    EXPECT_LE(err, previous + 1e-3) << r;
    previous = err;
  }
}

TEST(Compress, PrototypesMatchCachedApproximateModel) {
  std::mt19937_64 rng(8);
  const ProKeRModel model = fitted(rng, 24, 6, 4, 3.0);
  const FourierMap map = build_fourier_map(6, 12, 3.0, false, 8);
  const ApproxKernelModel approx = fit_approximate(model, map);
  const PrototypeModel proto = compress(model, map);
  EXPECT_LE(max_abs(proto.prototypes - featurize(map, model.support.data).transpose() * approx.gamma), 1e-12);
  const FeatureSet q = oracle::unlabeled(oracle::unit_rows(30, 6, rng));
  EXPECT_LE(max_abs(prototype_predict(proto, q) - approximate_predict(approx, q)), 1e-9);
}

TEST(Compress, ApproximateGammaSolvesApproximateSystem) {
  std::mt19937_64 rng(9);
  const ProKeRModel model = fitted(rng, 15, 5, 3, 2.0, 0.3);
  const FourierMap map = build_fourier_map(5, 300, 2.0, true, 9);
  const ApproxKernelModel approx = fit_approximate(model, map);
  const Matrix psi = featurize(map, model.support.data);
  const Matrix r = one_hot(model.support).values - model.support.data * model.text.weights;
  const Matrix lhs = (psi * psi.transpose()) * approx.gamma + 0.3 * approx.gamma;
  EXPECT_LE(max_abs(lhs - r), 1e-6);
}

TEST(Compress, ZeroGammaGivesZeroPrototypes) {
  std::mt19937_64 rng(10);
  ProKeRModel model = fitted(rng, 8, 4, 2, 2.0);
  // labels equal to the base predictor -> zero residual
  model.support.labels.clear();
  model.support.num_classes = 0;
  model.gamma.setZero();
  const PrototypeModel proto = compress(model, build_fourier_map(4, 8, 2.0, false, 1));
  EXPECT_EQ(max_abs(proto.prototypes), 0.0);
  const FeatureSet q = oracle::unlabeled(oracle::unit_rows(5, 4, rng));
  EXPECT_TRUE(prototype_predict(proto, q) == zero_shot(model.text, q));
}

TEST(Compress, RejectsMismatchedMaps) {
  std::mt19937_64 rng(11);
  const ProKeRModel model = fitted(rng, 8, 4, 2, 2.0);
  try {
    compress(model, build_fourier_map(4, 8, 3.0, false, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBetaMismatch);
  }
  ProKeRModel linear = model;
  linear.kernel = KernelSpec::linear();
  try {
    compress(linear, build_fourier_map(4, 8, 2.0, false, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedKernel);
  }
  EXPECT_THROW(compress(model, build_fourier_map(5, 8, 2.0, false, 1)), Error);
}

TEST(Compress, StoredNumberCounts) {
  std::mt19937_64 rng(12);
  const Index n = 5, k = 16, d = 8, r = 2 * d;
  const ProKeRModel model = fitted(rng, n * k, d, static_cast<int>(n), 2.0);
  const PrototypeModel proto = compress(model, build_fourier_map(d, r, 2.0, false, 1));
  EXPECT_EQ(stored_numbers(proto), static_cast<std::size_t>(n * (d + r)));
  EXPECT_EQ(stored_numbers(model), static_cast<std::size_t>(n * k + n * (k + 1) * d));
  EXPECT_LT(encode_prototype_model(proto).size(), encode_proker_model(model).size());
}

TEST(Compress, AccuracyCloseToExactKernel) {
  ClassificationSpec spec;
  spec.per_class = 60;
  const ClassificationPool pool = make_classification_pool(spec, 13);
  const TextClassifier text = corrupt_text(pool.text, 0.3, 13);
  const FewShotTask task = sample_task(pool.pool, text, 16, 1.0, 13);
  AdapterConfig c;
  c.method = Method::kProKeR;
  c.lambda = 0.1;
  c.kernel = resolve_kernel(KernelSpec::rbf(), task.support);
  const ProKeRModel model = proker_fit(c, task.support, one_hot(task.support).values, text);
  const double exact = accuracy(proker_predict(model, task.query), task.query.labels);
  const PrototypeModel proto = compress(model, build_fourier_map(16, 2048, c.kernel.beta_value(), false, 13));
  const double approx = accuracy(prototype_predict(proto, task.query), task.query.labels);
  EXPECT_NEAR(approx, exact, 0.015);
}
