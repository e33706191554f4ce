#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "proker/container.hpp"
#include "proker/error.hpp"
#include "scratch.hpp"

using namespace proker;

namespace {

ProKeRModel small_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureSet s = oracle::labeled(oracle::unit_rows(12, 5, rng).cast<float>().cast<double>(), 3);
  s.normalized = true;
  s.metadata["dataset"] = "toy";
  AdapterConfig c;
  c.method = Method::kProKeR;
  c.lambda = 0.25;
  c.kernel = KernelSpec::rbf(2.0);
  TextClassifier t = oracle::text((oracle::gaussian(5, 3, rng) * 0.2).cast<float>().cast<double>());
  t.class_names = {"a", "b", "c"};
  return proker_fit(c, s, one_hot(s).values, t);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kIoError;
}

}  // namespace

TEST(ProKeRContainer, RoundTrip) {
  const ProKeRModel m = small_model(1);
  const auto path = scratch("model.pkm");
  save_proker_model(m, path);
  const ProKeRModel back = load_proker_model(path);
  EXPECT_TRUE(back.support == m.support);
  EXPECT_EQ(back.text.weights, m.text.weights);
  EXPECT_EQ(back.text.class_names, m.text.class_names);
  EXPECT_EQ(back.lambda, m.lambda);
  EXPECT_EQ(back.jitter, m.jitter);
  EXPECT_EQ(back.kernel.to_json(), m.kernel.to_json());
  // gamma is stored as f32
  EXPECT_LE((back.gamma - m.gamma).cwiseAbs().maxCoeff(), 1e-6 * m.gamma.cwiseAbs().maxCoeff());
  std::mt19937_64 rng(2);
  const FeatureSet q = oracle::unlabeled(oracle::unit_rows(10, 5, rng));
  EXPECT_LE((proker_predict(back, q) - proker_predict(m, q)).cwiseAbs().maxCoeff(), 1e-5);
  // re-encoding a decoded model is byte-stable
  EXPECT_EQ(encode_proker_model(back), read_file_bytes(path));
}

TEST(ProKeRContainer, RejectsCorruption) {
  auto bytes = encode_proker_model(small_model(3));
  auto bad = bytes;
  std::memcpy(bad.data(), "PKM2", 4);
  EXPECT_EQ(code_of([&] { decode_proker_model(bad); }), ErrorCode::kBadMagic);
  bad.assign(bytes.begin(), bytes.end() - 9);
  EXPECT_EQ(code_of([&] { decode_proker_model(bad); }), ErrorCode::kDimMismatch);
  bad = bytes;
  bad.push_back(1);
  EXPECT_EQ(code_of([&] { decode_proker_model(bad); }), ErrorCode::kDimMismatch);
}

TEST(PrototypeContainer, RoundTripAndKindCheck) {
  const ProKeRModel m = small_model(4);
  const PrototypeModel p = compress(m, build_fourier_map(5, 10, 2.0, true, 7));
  const auto bytes = encode_prototype_model(p);
  const PrototypeModel back = decode_prototype_model(bytes);
  EXPECT_EQ(back.map.seed, 7u);
  EXPECT_TRUE(back.map.orthogonal);
  EXPECT_EQ(back.map.count(), 10);
  EXPECT_EQ(back.map.frequencies, p.map.frequencies.cast<float>().cast<double>());
  std::mt19937_64 rng(5);
  const FeatureSet q = oracle::unlabeled(oracle::unit_rows(10, 5, rng));
  EXPECT_LE((prototype_predict(back, q) - prototype_predict(p, q)).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_EQ(code_of([&] { decode_proker_model(bytes); }), ErrorCode::kBadMetadata);
  EXPECT_EQ(code_of([&] { decode_prototype_model(encode_proker_model(m)); }), ErrorCode::kBadMetadata);
}

TEST(Inspect, FsfAndPkm) {
  const auto fsf = scratch("inspect.fsf");
  const ProKeRModel m = small_model(6);
  save_featureset(m.support, fsf);
  const auto j = inspect_file(fsf);
  EXPECT_EQ(j["format"], "FSF1");
  EXPECT_EQ(j["rows"], 12);
  EXPECT_EQ(j["dim"], 5);
  EXPECT_EQ(j["flags"]["has_labels"], true);
  EXPECT_EQ(j["metadata"]["num_classes"], 3);
  EXPECT_EQ(j["metadata"]["dataset"], "toy");

  const auto pkm = scratch("inspect.pkm");
  save_proker_model(m, pkm);
  const auto k = inspect_file(pkm);
  EXPECT_EQ(k["format"], "PKM1");
  EXPECT_EQ(k["header"]["kind"], "proker");
  EXPECT_EQ(k["blocks"]["gamma"]["rows"], 12);

  const auto junk = scratch("junk.bin");
  write_file_bytes(junk, {'h', 'e', 'l', 'l', 'o'});
  EXPECT_EQ(code_of([&] { inspect_file(junk); }), ErrorCode::kBadMagic);
}
