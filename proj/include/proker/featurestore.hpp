#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

namespace proker {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Samples stored one per row, optionally labeled.
///
/// Values are held in double precision; the on-disk representation is f32,
/// so a set built from f32-representable values survives save/load exactly.
struct FeatureSet {
  Matrix data;                       // rows x dim
  std::vector<std::int32_t> labels;  // empty when the set is unlabeled
  int num_classes = 0;
  bool normalized = false;
  /// Trailer keys other than num_classes (class_names, dataset, ...).
  nlohmann::json metadata = nlohmann::json::object();

  Index rows() const { return data.rows(); }
  Index dim() const { return data.cols(); }
  bool has_labels() const { return !labels.empty(); }

  /// Throws DimMismatch / CorruptLabel / NonFinite / NotNormalized.
  void validate() const;

  /// Rows selected by index, labels and metadata carried over.
  FeatureSet subset(const std::vector<Index>& indices) const;

  bool operator==(const FeatureSet& other) const;
};

/// Frozen base classifier f(x) = x * weights.
struct TextClassifier {
  Matrix weights;  // dim x num_classes
  std::vector<std::string> class_names;
  nlohmann::json metadata = nlohmann::json::object();

  Index dim() const { return weights.rows(); }
  Index num_classes() const { return weights.cols(); }
  Vector column_norms() const { return weights.colwise().norm().transpose(); }

  /// Logits for a batch of queries (one per row).
  Matrix apply(const Matrix& queries) const;
};

struct OneHotLabels {
  Matrix values;  // rows x num_classes
};

struct FewShotTask {
  FeatureSet support;  // exactly `shots` rows per class
  FeatureSet query;
  std::optional<FeatureSet> validation;
  TextClassifier text;
  int shots = 0;
  std::uint64_t seed = 0;
  std::string name;
};

enum class NormalizePolicy {
  kIfUnnormalized,  // re-normalize rows when the file's normalized bit is clear
  kPreserve,        // return the payload untouched
};

FeatureSet load_featureset(const std::filesystem::path& path,
                           NormalizePolicy policy = NormalizePolicy::kIfUnnormalized);
void save_featureset(const FeatureSet& fs, const std::filesystem::path& path);

/// In-memory FSF codec, used by the file functions and the model container.
std::vector<std::uint8_t> encode_featureset(const FeatureSet& fs);
FeatureSet decode_featureset(const std::vector<std::uint8_t>& bytes);

/// Text classifiers use FSF with rows = feature dim and one column per class.
TextClassifier load_text_classifier(const std::filesystem::path& path);
void save_text_classifier(const TextClassifier& text, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_text_classifier(const TextClassifier& text);
TextClassifier decode_text_classifier(const std::vector<std::uint8_t>& bytes);

/// Header fields and metadata of an FSF file, without materializing a FeatureSet.
struct FsfHeader {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  bool has_labels = false;
  bool normalized = false;
  nlohmann::json metadata;
};
FsfHeader read_fsf_header(const std::vector<std::uint8_t>& bytes);

FeatureSet l2_normalize(const FeatureSet& fs);
OneHotLabels one_hot(const FeatureSet& fs);

/// Splits `pool` per class into `shots` support rows, an optional validation
/// share and a query share of the remainder. Deterministic for a fixed seed.
FewShotTask sample_task(const FeatureSet& pool, const TextClassifier& text, int shots,
                        double query_fraction, std::uint64_t seed,
                        double validation_fraction = 0.0);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace proker
