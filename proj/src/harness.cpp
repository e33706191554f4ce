#include "proker/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "proker/error.hpp"
#include "proker/parallel.hpp"

namespace proker {

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string kernel_label(const KernelSpec& k) {
  std::string name = to_string(k.family());
  if (k.metric() == MetricKind::kMahalanobis) name += "-mahalanobis";
  return name;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Reports

void EvalReport::sort() {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.method, a.shots, a.seed) < std::tie(b.method, b.shots, b.seed);
  });
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kReportCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.kernel << ',' << format_number(r.lambda) << ','
        << format_number(r.beta) << ',' << format_number(r.alpha) << ',' << r.shots << ','
        << r.seed << ',' << format_number(r.score) << ',' << format_number(r.wall_ms) << '\n';
  }
  return out.str();
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method},
                    {"kernel", r.kernel},
                    {"lambda", r.lambda},
                    {"beta", r.beta},
                    {"alpha", r.alpha},
                    {"shots", r.shots},
                    {"seed", r.seed},
                    {"score", r.score},
                    {"wall_ms", r.wall_ms}});
  }
  return rows;
}

EvalReport report_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kBadMetadata, "report JSON must be an array");
  EvalReport report;
  try {
    for (const auto& o : j) {
      ReportRow r;
      r.method = o.at("method").get<std::string>();
      r.kernel = o.at("kernel").get<std::string>();
      r.lambda = o.at("lambda").get<double>();
      r.beta = o.at("beta").get<double>();
      r.alpha = o.at("alpha").get<double>();
      r.shots = o.at("shots").get<int>();
      r.seed = o.at("seed").get<std::uint64_t>();
      r.score = o.at("score").get<double>();
      r.wall_ms = o.at("wall_ms").get<double>();
      report.rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("report row: ") + e.what());
  }
  return report;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  if (format == ReportFormat::kCsv) {
    out << report_to_csv(report);
  } else {
    out << report_to_json(report).dump(2) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

EvalReport load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kBadMetadata, path.string() + " is not valid JSON");
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Classification evaluation

double accuracy(const Matrix& logits, const std::vector<std::int32_t>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw Error(ErrorCode::kDimMismatch, "logit rows differ from label count");
  }
  if (labels.empty()) return 0.0;
  const auto predicted = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ReportRow report_row(const AdapterConfig& cfg, const FeatureSet& support, int shots,
                   std::uint64_t seed) {
  ReportRow row;
  row.method = to_string(cfg.method);
  row.kernel = cfg.method == Method::kZeroShot ? "none" : kernel_label(cfg.kernel);
  const bool uses_lambda = cfg.method == Method::kProximalNW || cfg.method == Method::kLLR ||
                           cfg.method == Method::kProKeR;
  row.lambda = uses_lambda ? cfg.lambda : 0.0;
  row.alpha = cfg.method == Method::kTip ? cfg.alpha : 0.0;
  if (cfg.method != Method::kZeroShot && cfg.kernel.family() == KernelFamily::kRbf) {
    row.beta = cfg.kernel.beta() ? *cfg.kernel.beta() : resolve_kernel(cfg.kernel, support).beta_value();
  }
  row.shots = shots;
  row.seed = seed;
  return row;
}

double evaluate(const AdapterConfig& cfg, const FewShotTask& task) {
  return accuracy(predict(cfg, task), task.query.labels);
}

ClassificationPool make_classification_pool(const ClassificationSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 1 || spec.dim < spec.num_classes || spec.per_class < 1) {
    throw Error(ErrorCode::kInvalidConfig, "classification spec needs dim >= classes >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(spec.dim, spec.num_classes);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix means = qr.householderQ() * Matrix::Identity(spec.dim, spec.num_classes);

  ClassificationPool out;
  out.pool.data.resize(static_cast<Index>(spec.num_classes) * spec.per_class, spec.dim);
  out.pool.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int s = 0; s < spec.per_class; ++s) {
      const Index row = static_cast<Index>(c) * spec.per_class + s;
      for (Index d = 0; d < spec.dim; ++d) {
        out.pool.data(row, d) = means(d, c) + spec.spread * normal(rng);
      }
      out.pool.labels.push_back(c);
    }
  }
  out.pool = l2_normalize(out.pool);
  out.text.weights = means;
  return out;
}

TextClassifier corrupt_text(const TextClassifier& text, double fraction, std::uint64_t seed) {
  TextClassifier out = text;
  const Index n = text.num_classes();
  Index count = static_cast<Index>(std::lround(fraction * static_cast<double>(n)));
  if (fraction > 0.0) count = std::max<Index>(count, 2);
  count = std::min(count, n);
  if (count < 2) return out;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (Index i = 0; i < count; ++i) {
    out.weights.col(order[static_cast<std::size_t>(i)]) =
        text.weights.col(order[static_cast<std::size_t>((i + 1) % count)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

std::string to_string(Protocol protocol) {
  return protocol == Protocol::kTransferFromAnchor ? "transfer" : "per-dataset";
}

Protocol protocol_from_string(const std::string& name) {
  if (name == "transfer") return Protocol::kTransferFromAnchor;
  if (name == "per-dataset" || name == "per_dataset") return Protocol::kPerDatasetValidation;
  throw Error(ErrorCode::kInvalidConfig, "unknown protocol '" + name + "'");
}

void SweepGrid::validate() const {
  if (methods.empty()) throw Error(ErrorCode::kEmptyGrid, "no methods in grid");
  auto check = [](const std::vector<double>& axis, const char* name) {
    if (axis.empty()) throw Error(ErrorCode::kEmptyGrid, std::string("empty ") + name + " axis");
    for (double v : axis) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw Error(ErrorCode::kInvalidConfig, std::string(name) + " values must be positive");
      }
    }
  };
  for (Method m : methods) {
    if (m == Method::kTip) {
      check(alphas, "alpha");
      check(betas, "beta");
    }
    if (m == Method::kProximalNW || m == Method::kLLR || m == Method::kProKeR) {
      check(lambdas, "lambda");
      if (kernel.family() == KernelFamily::kRbf) check(betas, "beta");
    }
  }
  kernel.validate();
}

std::vector<SweepGrid::Point> SweepGrid::points(Method method) const {
  const bool rbf = kernel.family() == KernelFamily::kRbf;
  const std::vector<double> beta_axis = rbf ? betas : std::vector<double>{0.0};
  std::vector<Point> out;
  switch (method) {
    case Method::kZeroShot: out.push_back({}); break;
    case Method::kTip:
      for (double b : betas)
        for (double a : alphas) out.push_back({0.0, b, a});
      break;
    case Method::kProximalNW:
    case Method::kLLR:
    case Method::kProKeR:
      for (double l : lambdas)
        for (double b : beta_axis) out.push_back({l, b, 0.0});
      break;
  }
  return out;
}

AdapterConfig SweepGrid::config(Method method, const Point& point,
                                const FeatureSet& support) const {
  AdapterConfig cfg;
  cfg.method = method;
  cfg.text_scale = text_scale;
  cfg.lambda = point.lambda > 0.0 ? point.lambda : 1.0;
  cfg.alpha = point.alpha > 0.0 ? point.alpha : 1.0;
  cfg.kernel = kernel;
  if (method == Method::kTip && kernel.family() != KernelFamily::kRbf) cfg.kernel = KernelSpec::rbf();
  if (method != Method::kZeroShot && cfg.kernel.family() == KernelFamily::kRbf) {
    if (beta_relative) {
      const KernelSpec resolved = resolve_kernel(cfg.kernel, support);
      const double median = cfg.kernel.beta() ? median_heuristic_beta(resolved, support.data)
                                              : resolved.beta_value();
      cfg.kernel = resolved.with_beta(point.beta * median);
    } else {
      cfg.kernel = cfg.kernel.with_beta(point.beta);
    }
  }
  return cfg;
}

nlohmann::json SweepGrid::to_json() const {
  nlohmann::json methods_json = nlohmann::json::array();
  for (Method m : methods) methods_json.push_back(to_string(m));
  return {{"methods", methods_json},
          {"kernel", kernel.to_json()},
          {"lambdas", lambdas},
          {"betas", betas},
          {"beta_mode", beta_relative ? "median_multiple" : "absolute"},
          {"alphas", alphas},
          {"protocol", to_string(protocol)},
          {"text_scale", text_scale}};
}

SweepGrid SweepGrid::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kBadMetadata, "grid JSON must be an object");
  SweepGrid g;
  try {
    if (j.contains("methods")) {
      g.methods.clear();
      for (const auto& m : j["methods"]) g.methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("kernel")) g.kernel = KernelSpec::from_json(j["kernel"]);
    if (j.contains("lambdas")) g.lambdas = j["lambdas"].get<std::vector<double>>();
    if (j.contains("betas")) g.betas = j["betas"].get<std::vector<double>>();
    if (j.contains("alphas")) g.alphas = j["alphas"].get<std::vector<double>>();
    if (j.contains("beta_mode")) {
      const auto mode = j["beta_mode"].get<std::string>();
      if (mode != "median_multiple" && mode != "absolute") {
        throw Error(ErrorCode::kBadMetadata, "beta_mode must be median_multiple or absolute");
      }
      g.beta_relative = mode == "median_multiple";
    }
    if (j.contains("protocol")) g.protocol = protocol_from_string(j["protocol"].get<std::string>());
    g.text_scale = j.value("text_scale", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("grid JSON: ") + e.what());
  }
  return g;
}

namespace {

struct Scored {
  double score = 0.0;
  double wall_ms = 0.0;
  ReportRow row;
};

Scored score_split(const SweepGrid& grid, Method method, const SweepGrid::Point& point,
                   const FewShotTask& task, const FeatureSet& split) {
  const AdapterConfig cfg = grid.config(method, point, task.support);
  const auto start = std::chrono::steady_clock::now();
  const Logits logits = predict(cfg, task.support, task.text, split);
  Scored out;
  out.wall_ms = elapsed_ms(start);
  out.score = accuracy(logits, split.labels);
  out.row = report_row(cfg, task.support, task.shots, task.seed);
  out.row.score = out.score;
  out.row.wall_ms = out.wall_ms;
  return out;
}

nlohmann::json point_json(const SweepGrid& grid, Method method, const SweepGrid::Point& p,
                          double score) {
  nlohmann::json j = {{"method", to_string(method)}, {"score", score}};
  if (method == Method::kProximalNW || method == Method::kLLR || method == Method::kProKeR) {
    j["lambda"] = p.lambda;
  }
  if (method == Method::kTip) j["alpha"] = p.alpha;
  if (method == Method::kTip ||
      (method != Method::kZeroShot && grid.kernel.family() == KernelFamily::kRbf)) {
    j["beta"] = p.beta;
    j["beta_mode"] = grid.beta_relative ? "median_multiple" : "absolute";
  }
  return j;
}

}  // namespace

SweepResult sweep(const SweepGrid& grid, const std::vector<FewShotTask>& tasks,
                  const FewShotTask* anchor) {
  grid.validate();
  if (tasks.empty()) throw Error(ErrorCode::kInvalidConfig, "sweep needs at least one task");
  const bool transfer = grid.protocol == Protocol::kTransferFromAnchor;
  if (transfer && anchor == nullptr) {
    throw Error(ErrorCode::kMissingAnchor, "transfer protocol requires an anchor task");
  }
  if (!transfer) {
    for (const auto& t : tasks) {
      if (!t.validation) {
        throw Error(ErrorCode::kMissingValidation,
                    "task '" + t.name + "' has no validation split");
      }
    }
  }

  // Selection stage: every grid point on the selection split(s).
  struct Job {
    std::size_t method;
    std::size_t point;
    std::size_t task;  // index into `selection_tasks`
  };
  std::vector<const FewShotTask*> selection_tasks;
  if (transfer) {
    selection_tasks.push_back(anchor);
  } else {
    for (const auto& t : tasks) selection_tasks.push_back(&t);
  }
  std::vector<std::vector<SweepGrid::Point>> points;
  for (Method m : grid.methods) points.push_back(grid.points(m));

  std::vector<Job> jobs;
  for (std::size_t t = 0; t < selection_tasks.size(); ++t)
    for (std::size_t m = 0; m < grid.methods.size(); ++m)
      for (std::size_t p = 0; p < points[m].size(); ++p) jobs.push_back({m, p, t});

  std::vector<Scored> scored(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const FewShotTask& task = *selection_tasks[job.task];
    const FeatureSet& split = task.validation ? *task.validation : task.query;
    scored[i] = score_split(grid, grid.methods[job.method], points[job.method][job.point], task, split);
  });

  // best[t][m] = first grid point with the highest selection score.
  std::vector<std::vector<std::size_t>> best(selection_tasks.size(),
                                             std::vector<std::size_t>(grid.methods.size(), 0));
  std::vector<std::vector<double>> best_score(
      selection_tasks.size(), std::vector<double>(grid.methods.size(), -1.0));
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    if (scored[i].score > best_score[job.task][job.method]) {
      best_score[job.task][job.method] = scored[i].score;
      best[job.task][job.method] = job.point;
    }
  }

  SweepResult result;
  for (const auto& s : scored) result.selection.rows.push_back(s.row);
  result.selection.sort();

  // Final stage: selected point per (method, task) on the query split.
  struct Final {
    std::size_t method;
    std::size_t task;
    std::size_t point;
  };
  std::vector<Final> finals;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t m = 0; m < grid.methods.size(); ++m) {
      finals.push_back({m, t, transfer ? best[0][m] : best[t][m]});
    }
  }
  std::vector<Scored> final_scores(finals.size());
  parallel_for(finals.size(), [&](std::size_t i) {
    const Final& f = finals[i];
    final_scores[i] = score_split(grid, grid.methods[f.method], points[f.method][f.point],
                                  tasks[f.task], tasks[f.task].query);
  });
  for (const auto& s : final_scores) result.report.rows.push_back(s.row);
  result.report.sort();

  nlohmann::json selected;
  selected["protocol"] = to_string(grid.protocol);
  if (transfer) {
    selected["anchor"] = anchor->name;
    nlohmann::json methods = nlohmann::json::array();
    for (std::size_t m = 0; m < grid.methods.size(); ++m) {
      methods.push_back(point_json(grid, grid.methods[m], points[m][best[0][m]], best_score[0][m]));
    }
    selected["methods"] = methods;
  } else {
    nlohmann::json per_task = nlohmann::json::array();
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      nlohmann::json methods = nlohmann::json::array();
      for (std::size_t m = 0; m < grid.methods.size(); ++m) {
        methods.push_back(point_json(grid, grid.methods[m], points[m][best[t][m]], best_score[t][m]));
      }
      per_task.push_back({{"task", tasks[t].name}, {"seed", tasks[t].seed}, {"methods", methods}});
    }
    selected["tasks"] = per_task;
  }
  result.selected = std::move(selected);
  return result;
}

EvalReport lambda_sensitivity(const AdapterConfig& cfg, const std::vector<double>& multipliers,
                              const std::vector<FewShotTask>& tasks) {
  if (multipliers.empty()) throw Error(ErrorCode::kEmptyGrid, "no lambda multipliers");
  EvalReport report;
  report.rows.resize(multipliers.size() * tasks.size());
  parallel_for(report.rows.size(), [&](std::size_t i) {
    const auto& task = tasks[i % tasks.size()];
    AdapterConfig c = cfg;
    c.lambda = cfg.lambda * multipliers[i / tasks.size()];
    c.kernel = resolve_kernel(cfg.kernel, task.support);
    const auto start = std::chrono::steady_clock::now();
    const double acc = accuracy(predict(c, task), task.query.labels);
    ReportRow row = report_row(c, task.support, task.shots, task.seed);
    row.wall_ms = elapsed_ms(start);
    row.score = acc;
    report.rows[i] = row;
  });
  return report;
}

}  // namespace proker
