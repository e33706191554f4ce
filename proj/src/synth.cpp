#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "proker/error.hpp"
#include "proker/harness.hpp"
#include "proker/parallel.hpp"

namespace proker {

namespace {

constexpr int kBaseFitGrid = 400;

FeatureSet embed(const std::vector<double>& theta) {
  FeatureSet out;
  out.data.resize(static_cast<Index>(theta.size()), 2);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out.data(static_cast<Index>(i), 0) = std::cos(theta[i]);
    out.data(static_cast<Index>(i), 1) = std::sin(theta[i]);
  }
  out.num_classes = 1;
  out.normalized = true;
  return out;
}

Matrix curve(const SynthSpec& spec, const std::vector<double>& theta, double noise,
             std::mt19937_64* rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix y(static_cast<Index>(theta.size()), 1);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double v = spec.amplitude * std::sin(spec.frequency * theta[i]);
    if (noise > 0.0) v += noise * normal(*rng);
    y(static_cast<Index>(i), 0) = v;
  }
  return y;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  }
  return out;
}

void check_axis(const std::vector<double>& axis, const char* name) {
  if (axis.empty()) throw Error(ErrorCode::kEmptyGrid, std::string("empty ") + name + " axis");
  for (double v : axis) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidConfig, std::string(name) + " values must be positive");
    }
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (support_size < 2 || validation_size < 1 || query_size < 1) {
    throw Error(ErrorCode::kInvalidConfig, "synthetic split sizes must be positive (support >= 2)");
  }
  if (!(theta_max > theta_min)) throw Error(ErrorCode::kInvalidConfig, "theta range is empty");
  if (!(noise >= 0.0) || !std::isfinite(amplitude) || !std::isfinite(frequency)) {
    throw Error(ErrorCode::kInvalidConfig, "noise must be non-negative, amplitude/frequency finite");
  }
  check_axis(lambdas, "lambda");
  check_axis(betas, "beta");
  check_axis(alphas, "alpha");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"amplitude", amplitude},   {"frequency", frequency},
          {"noise", noise},           {"support_size", support_size},
          {"validation_size", validation_size}, {"query_size", query_size},
          {"theta_min", theta_min},   {"theta_max", theta_max},
          {"base_bias", base_bias},   {"lambdas", lambdas},
          {"betas", betas},           {"alphas", alphas}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kBadMetadata, "synthetic spec must be an object");
  SynthSpec s;
  try {
    s.amplitude = j.value("amplitude", s.amplitude);
    s.frequency = j.value("frequency", s.frequency);
    s.noise = j.value("noise", s.noise);
    s.support_size = j.value("support_size", s.support_size);
    s.validation_size = j.value("validation_size", s.validation_size);
    s.query_size = j.value("query_size", s.query_size);
    s.theta_min = j.value("theta_min", s.theta_min);
    s.theta_max = j.value("theta_max", s.theta_max);
    s.base_bias = j.value("base_bias", s.base_bias);
    s.lambdas = j.value("lambdas", s.lambdas);
    s.betas = j.value("betas", s.betas);
    s.alphas = j.value("alphas", s.alphas);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthTask synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(spec.theta_min, spec.theta_max);

  SynthTask task;
  task.spec = spec;
  task.seed = seed;

  std::vector<double> ts(static_cast<std::size_t>(spec.support_size));
  for (auto& t : ts) t = uniform(rng);
  std::sort(ts.begin(), ts.end());
  task.support = embed(ts);
  task.support.labels.assign(ts.size(), 0);
  task.support_targets = curve(spec, ts, spec.noise, &rng);

  std::vector<double> tv(static_cast<std::size_t>(spec.validation_size));
  for (auto& t : tv) t = uniform(rng);
  task.validation = embed(tv);
  task.validation_targets = curve(spec, tv, spec.noise, &rng);

  const auto tq = linspace(spec.theta_min, spec.theta_max, spec.query_size);
  task.query = embed(tq);
  task.query_targets = curve(spec, tq, 0.0, nullptr);

  const auto grid = linspace(spec.theta_min, spec.theta_max, kBaseFitGrid);
  const FeatureSet g = embed(grid);
  const Matrix y = curve(spec, grid, 0.0, nullptr);
  task.base_predictor.weights =
      (1.0 - spec.base_bias) * g.data.colPivHouseholderQr().solve(y);
  task.base_predictor.class_names = {"y"};
  return task;
}

Matrix regress(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
               const TextClassifier& base, const FeatureSet& queries) {
  switch (cfg.method) {
    case Method::kZeroShot: return zero_shot(base, queries, cfg.text_scale);
    case Method::kTip: return tip_predict(cfg, support, targets, base, queries);
    case Method::kProximalNW: return proximal_nw_predict(cfg, support, targets, base, queries);
    case Method::kLLR: return llr_predict(cfg, support, targets, base, queries);
    case Method::kProKeR: return proker_predict(proker_fit(cfg, support, targets, base), queries);
  }
  return {};
}

double mse(const Matrix& predicted, const Matrix& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
    throw Error(ErrorCode::kDimMismatch, "prediction and target shapes differ");
  }
  if (truth.size() == 0) return 0.0;
  return (predicted - truth).squaredNorm() / static_cast<double>(truth.size());
}

ReportRow synth_fit(const SynthTask& task, Method method) {
  const SynthSpec& spec = task.spec;
  std::vector<AdapterConfig> candidates;
  AdapterConfig base;
  base.method = method;
  if (method == Method::kZeroShot) {
    candidates.push_back(base);
  } else if (method == Method::kTip) {
    for (double b : spec.betas) {
      for (double a : spec.alphas) {
        AdapterConfig c = base;
        c.kernel = KernelSpec::rbf(b);
        c.alpha = a;
        candidates.push_back(c);
      }
    }
  } else {
    for (double l : spec.lambdas) {
      for (double b : spec.betas) {
        AdapterConfig c = base;
        c.kernel = KernelSpec::rbf(b);
        c.lambda = l;
        candidates.push_back(c);
      }
    }
  }

  std::size_t best = 0;
  double best_mse = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double m = mse(regress(candidates[i], task.support, task.support_targets,
                                 task.base_predictor, task.validation),
                         task.validation_targets);
    if (i == 0 || m < best_mse) {
      best = i;
      best_mse = m;
    }
  }

  const AdapterConfig& cfg = candidates[best];
  const auto start = std::chrono::steady_clock::now();
  const Matrix pred =
      regress(cfg, task.support, task.support_targets, task.base_predictor, task.query);
  ReportRow row;
  row.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  row.method = to_string(method);
  row.kernel = method == Method::kZeroShot ? "none" : "rbf";
  row.lambda = (method == Method::kZeroShot || method == Method::kTip) ? 0.0 : cfg.lambda;
  row.beta = method == Method::kZeroShot ? 0.0 : cfg.kernel.beta_value();
  row.alpha = method == Method::kTip ? cfg.alpha : 0.0;
  row.shots = spec.support_size;
  row.seed = task.seed;
  row.score = mse(pred, task.query_targets);
  return row;
}

EvalReport synth_run(const SynthSpec& spec, const std::vector<Method>& methods, int seeds,
                     std::uint64_t base_seed) {
  spec.validate();
  if (seeds < 1) throw Error(ErrorCode::kInvalidConfig, "seeds must be at least 1");
  if (methods.empty()) throw Error(ErrorCode::kEmptyGrid, "no methods requested");
  std::vector<SynthTask> tasks;
  for (int s = 0; s < seeds; ++s) tasks.push_back(synth_generate(spec, base_seed + s));

  EvalReport report;
  report.rows.resize(tasks.size() * methods.size());
  parallel_for(report.rows.size(), [&](std::size_t i) {
    report.rows[i] = synth_fit(tasks[i / methods.size()], methods[i % methods.size()]);
  });
  report.sort();
  return report;
}

int synth_wins(const EvalReport& report, Method better, Method worse) {
  const std::string b = to_string(better), w = to_string(worse);
  std::map<std::uint64_t, double> lhs, rhs;
  for (const auto& r : report.rows) {
    if (r.method == b) lhs[r.seed] = r.score;
    if (r.method == w) rhs[r.seed] = r.score;
  }
  int wins = 0;
  for (const auto& [seed, score] : lhs) {
    auto it = rhs.find(seed);
    if (it != rhs.end() && score < it->second) ++wins;
  }
  return wins;
}

}  // namespace proker
