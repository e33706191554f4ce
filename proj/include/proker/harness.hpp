#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "proker/adapters.hpp"

namespace proker {

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string method;
  std::string kernel;
  double lambda = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
  int shots = 0;
  std::uint64_t seed = 0;
  double score = 0.0;  // accuracy for classification, MSE for regression
  double wall_ms = 0.0;

  bool operator==(const ReportRow&) const = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  /// Stable sort by (method, shots, seed).
  void sort();
  bool operator==(const EvalReport&) const = default;
};

enum class ReportFormat { kCsv, kJson };

inline constexpr const char* kReportCsvHeader =
    "method,kernel,lambda,beta,alpha,shots,seed,score,wall_ms";

std::string report_to_csv(const EvalReport& report);
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport load_report_json(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Classification evaluation

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Matrix& logits, const std::vector<std::int32_t>& labels);

/// Row describing `cfg` on `support`: beta is the resolved value (median
/// heuristic when the spec leaves it open), unused hyperparameters are 0.
ReportRow report_row(const AdapterConfig& cfg, const FeatureSet& support, int shots,
                     std::uint64_t seed);

/// predict() on the task's query split, scored by accuracy.
double evaluate(const AdapterConfig& cfg, const FewShotTask& task);

/// Separable Gaussian classes on the unit sphere. Class means are the
/// columns of a random orthonormal basis (QR), samples are mean + spread * g
/// renormalized, and the base classifier's columns are the class means.
struct ClassificationSpec {
  int num_classes = 10;
  int dim = 16;
  int per_class = 50;
  double spread = 0.15;
};

struct ClassificationPool {
  FeatureSet pool;
  TextClassifier text;
};

ClassificationPool make_classification_pool(const ClassificationSpec& spec, std::uint64_t seed);

/// Cyclically shifts a `fraction` of the classifier's columns among
/// themselves, so those classes are systematically mispredicted.
TextClassifier corrupt_text(const TextClassifier& text, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Hyperparameter sweeps

enum class Protocol { kTransferFromAnchor, kPerDatasetValidation };

std::string to_string(Protocol protocol);
Protocol protocol_from_string(const std::string& name);

struct SweepGrid {
  std::vector<Method> methods = {Method::kTip, Method::kProximalNW, Method::kProKeR};
  /// Family and metric template; beta comes from the `betas` axis.
  KernelSpec kernel = KernelSpec::rbf();
  std::vector<double> lambdas = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  /// Multiples of the support's median-heuristic beta when beta_relative,
  /// absolute values otherwise.
  std::vector<double> betas = {0.25, 0.5, 1.0, 2.0, 4.0};
  bool beta_relative = true;
  std::vector<double> alphas = {0.5, 1.0, 2.0, 4.0};
  Protocol protocol = Protocol::kPerDatasetValidation;
  double text_scale = 1.0;

  /// Throws EmptyGrid for an empty axis and InvalidConfig for non-positive values.
  void validate() const;

  /// Grid points for one method, in grid order (first best wins ties).
  struct Point {
    double lambda = 0.0;
    double beta = 0.0;  // grid value: multiplier or absolute
    double alpha = 0.0;
  };
  std::vector<Point> points(Method method) const;

  /// Concrete adapter config for a grid point on a given support set.
  AdapterConfig config(Method method, const Point& point, const FeatureSet& support) const;

  nlohmann::json to_json() const;
  static SweepGrid from_json(const nlohmann::json& j);
};

struct SweepResult {
  EvalReport report;        // selected config per (method, task), scored on queries
  EvalReport selection;     // every grid point scored on the selection split
  nlohmann::json selected;  // winning grid points
};

/// TransferFromAnchor selects on the anchor (its validation split when it has
/// one, else its queries) and applies the winner to every task.
/// PerDatasetValidation selects per task on its validation split.
/// Throws EmptyGrid, MissingAnchor, MissingValidation.
SweepResult sweep(const SweepGrid& grid, const std::vector<FewShotTask>& tasks,
                  const FewShotTask* anchor = nullptr);

/// Scores `cfg` with lambda scaled by each multiplier, one row per
/// (multiplier, task).
EvalReport lambda_sensitivity(const AdapterConfig& cfg, const std::vector<double>& multipliers,
                              const std::vector<FewShotTask>& tasks);

// ---------------------------------------------------------------------------
// Synthetic 1-D regression

/// Targets y = amplitude * sin(frequency * theta) + noise, with theta drawn
/// uniformly on [theta_min, theta_max] and embedded as (cos, sin) so inputs
/// are unit-norm. The base predictor is the least-squares linear fit of the
/// clean curve shrunk by (1 - base_bias).
struct SynthSpec {
  double amplitude = 1.0;
  double frequency = 3.0;
  double noise = 0.2;
  int support_size = 16;
  int validation_size = 64;
  int query_size = 200;
  double theta_min = 0.0;
  double theta_max = 3.141592653589793;
  double base_bias = 0.5;
  std::vector<double> lambdas = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> betas = {1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0};
  std::vector<double> alphas = {0.1, 0.3, 1.0, 3.0};

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthTask {
  FeatureSet support;
  Matrix support_targets;
  FeatureSet validation;  // noisy, used for hyperparameter selection
  Matrix validation_targets;
  FeatureSet query;       // evenly spaced held-out grid, clean targets
  Matrix query_targets;
  TextClassifier base_predictor;
  SynthSpec spec;
  std::uint64_t seed = 0;
};

SynthTask synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// Method dispatch on real-valued targets.
Matrix regress(const AdapterConfig& cfg, const FeatureSet& support, const Matrix& targets,
               const TextClassifier& base, const FeatureSet& queries);

double mse(const Matrix& predicted, const Matrix& truth);

/// Picks (lambda, beta[, alpha]) on the validation split, reports held-out MSE.
ReportRow synth_fit(const SynthTask& task, Method method);

/// One row per (method, seed) for seeds base_seed .. base_seed + seeds - 1.
EvalReport synth_run(const SynthSpec& spec, const std::vector<Method>& methods, int seeds,
                     std::uint64_t base_seed = 0);

/// Counts seeds where method `better` has strictly lower MSE than `worse`.
int synth_wins(const EvalReport& report, Method better, Method worse);

}  // namespace proker
