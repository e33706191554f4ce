#include "proker/featurestore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>

#include "proker/error.hpp"

namespace proker {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'F', '1'};
constexpr std::uint8_t kFlagHasLabels = 0x1;
constexpr std::uint8_t kFlagNormalized = 0x2;
constexpr std::size_t kHeaderBytes = 13;
constexpr double kNormTolerance = 1e-5;
constexpr double kZeroNorm = 1e-12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  std::size_t remaining() const { return bytes.size() - pos; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw Error(ErrorCode::kDimMismatch, std::string("payload truncated while reading ") + what);
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = get_u32(bytes.data() + pos);
    pos += 4;
    return v;
  }
};

struct RawFsf {
  FsfHeader header;
  std::vector<float> values;
  std::vector<std::int32_t> labels;
};

RawFsf parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "missing FSF1 magic");
  }
  Cursor c{bytes, 4};
  RawFsf raw;
  raw.header.rows = c.u32("rows");
  raw.header.dim = c.u32("dim");
  c.need(1, "flags");
  const std::uint8_t flags = bytes[c.pos++];
  raw.header.has_labels = (flags & kFlagHasLabels) != 0;
  raw.header.normalized = (flags & kFlagNormalized) != 0;

  const std::uint64_t count = std::uint64_t{raw.header.rows} * raw.header.dim;
  if (count * 4 > c.remaining()) {
    throw Error(ErrorCode::kDimMismatch,
                "declared " + std::to_string(raw.header.rows) + "x" +
                    std::to_string(raw.header.dim) + " exceeds payload");
  }
  raw.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    raw.values[i] = std::bit_cast<float>(get_u32(bytes.data() + c.pos));
    c.pos += 4;
  }
  if (raw.header.has_labels) {
    c.need(std::size_t{raw.header.rows} * 4, "labels");
    raw.labels.resize(raw.header.rows);
    for (auto& label : raw.labels) {
      label = static_cast<std::int32_t>(get_u32(bytes.data() + c.pos));
      c.pos += 4;
    }
  }
  const std::uint32_t json_len = c.u32("metadata length");
  c.need(json_len, "metadata");
  if (c.remaining() != json_len) {
    throw Error(ErrorCode::kDimMismatch,
                std::to_string(c.remaining() - json_len) + " trailing bytes after metadata");
  }
  const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(c.pos);
  raw.header.metadata = nlohmann::json::parse(first, bytes.end(), nullptr, false);
  if (raw.header.metadata.is_discarded() || !raw.header.metadata.is_object()) {
    throw Error(ErrorCode::kBadMetadata, "metadata is not a JSON object");
  }
  if (!raw.header.metadata.contains("num_classes") ||
      !raw.header.metadata["num_classes"].is_number_integer() ||
      raw.header.metadata["num_classes"].get<std::int64_t>() < 0) {
    throw Error(ErrorCode::kBadMetadata, "missing or invalid num_classes");
  }
  return raw;
}

std::vector<std::uint8_t> encode(const Matrix& data, const std::vector<std::int32_t>& labels,
                                 bool normalized, const nlohmann::json& metadata) {
  std::vector<std::uint8_t> out;
  const std::string json = metadata.dump();
  out.reserve(kHeaderBytes + data.size() * 4 + labels.size() * 4 + 4 + json.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(data.rows()));
  put_u32(out, static_cast<std::uint32_t>(data.cols()));
  std::uint8_t flags = 0;
  if (!labels.empty()) flags |= kFlagHasLabels;
  if (normalized) flags |= kFlagNormalized;
  out.push_back(flags);
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.cols(); ++j) put_f32(out, data(i, j));
  }
  for (std::int32_t label : labels) put_u32(out, static_cast<std::uint32_t>(label));
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out.insert(out.end(), json.begin(), json.end());
  return out;
}

Matrix to_matrix(const RawFsf& raw) {
  Matrix m(raw.header.rows, raw.header.dim);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const float v = raw.values[static_cast<std::size_t>(i * m.cols() + j)];
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFinite,
                    "entry (" + std::to_string(i) + ", " + std::to_string(j) + ") is not finite");
      }
      m(i, j) = v;
    }
  }
  return m;
}

}  // namespace

void FeatureSet::validate() const {
  if (rows() < 1 || dim() < 1) {
    throw Error(ErrorCode::kDimMismatch, "feature set must have at least one row and column");
  }
  if (has_labels() && static_cast<Index>(labels.size()) != rows()) {
    throw Error(ErrorCode::kDimMismatch, "label count differs from row count");
  }
  if (!data.allFinite()) throw Error(ErrorCode::kNonFinite, "feature matrix has NaN/Inf");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error(ErrorCode::kCorruptLabel, "label " + std::to_string(labels[i]) + " at row " +
                                                std::to_string(i) + " outside [0, " +
                                                std::to_string(num_classes) + ")");
    }
  }
  if (normalized) {
    const Vector norms = data.rowwise().norm();
    for (Index i = 0; i < norms.size(); ++i) {
      if (std::abs(norms[i] - 1.0) > kNormTolerance) {
        throw Error(ErrorCode::kNotNormalized,
                    "row " + std::to_string(i) + " has norm " + std::to_string(norms[i]));
      }
    }
  }
}

FeatureSet FeatureSet::subset(const std::vector<Index>& indices) const {
  FeatureSet out;
  out.data.resize(static_cast<Index>(indices.size()), dim());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.data.row(static_cast<Index>(r)) = data.row(indices[r]);
    if (has_labels()) out.labels.push_back(labels[static_cast<std::size_t>(indices[r])]);
  }
  out.num_classes = num_classes;
  out.normalized = normalized;
  out.metadata = metadata;
  return out;
}

bool FeatureSet::operator==(const FeatureSet& other) const {
  if (data.rows() != other.data.rows() || data.cols() != other.data.cols()) return false;
  if (std::memcmp(data.data(), other.data.data(), sizeof(double) * data.size()) != 0) return false;
  return labels == other.labels && num_classes == other.num_classes &&
         normalized == other.normalized && metadata == other.metadata;
}

Matrix TextClassifier::apply(const Matrix& queries) const {
  if (queries.cols() != weights.rows()) {
    throw Error(ErrorCode::kDimMismatch, "query dim " + std::to_string(queries.cols()) +
                                             " vs classifier dim " +
                                             std::to_string(weights.rows()));
  }
  return queries * weights;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

FsfHeader read_fsf_header(const std::vector<std::uint8_t>& bytes) { return parse(bytes).header; }

std::vector<std::uint8_t> encode_featureset(const FeatureSet& fs) {
  fs.validate();
  nlohmann::json meta = fs.metadata;
  meta["num_classes"] = fs.num_classes;
  return encode(fs.data, fs.labels, fs.normalized, meta);
}

FeatureSet decode_featureset(const std::vector<std::uint8_t>& bytes) {
  RawFsf raw = parse(bytes);
  FeatureSet fs;
  fs.data = to_matrix(raw);
  fs.labels = std::move(raw.labels);
  fs.num_classes = raw.header.metadata["num_classes"].get<int>();
  fs.normalized = raw.header.normalized;
  fs.metadata = std::move(raw.header.metadata);
  fs.metadata.erase("num_classes");
  fs.validate();
  return fs;
}

FeatureSet load_featureset(const std::filesystem::path& path, NormalizePolicy policy) {
  FeatureSet fs = decode_featureset(read_file_bytes(path));
  if (policy == NormalizePolicy::kIfUnnormalized && !fs.normalized) return l2_normalize(fs);
  return fs;
}

void save_featureset(const FeatureSet& fs, const std::filesystem::path& path) {
  write_file_bytes(path, encode_featureset(fs));
}

std::vector<std::uint8_t> encode_text_classifier(const TextClassifier& text) {
  if (text.weights.size() == 0) throw Error(ErrorCode::kDimMismatch, "empty text classifier");
  if (!text.weights.allFinite()) throw Error(ErrorCode::kNonFinite, "text weights have NaN/Inf");
  nlohmann::json meta = text.metadata;
  meta.erase("column_norms");
  meta["kind"] = "text_classifier";
  meta["num_classes"] = text.num_classes();
  if (!text.class_names.empty()) {
    if (static_cast<Index>(text.class_names.size()) != text.num_classes()) {
      throw Error(ErrorCode::kBadMetadata, "class_names size differs from column count");
    }
    meta["class_names"] = text.class_names;
  }
  return encode(text.weights, {}, false, meta);
}

TextClassifier decode_text_classifier(const std::vector<std::uint8_t>& bytes) {
  RawFsf raw = parse(bytes);
  auto& meta = raw.header.metadata;
  if (meta.value("kind", std::string{}) != "text_classifier") {
    throw Error(ErrorCode::kBadMetadata, "FSF file is not a text classifier (kind key)");
  }
  if (raw.header.has_labels) throw Error(ErrorCode::kBadMetadata, "text classifier has labels");
  if (raw.header.rows < 1 || raw.header.dim < 1) {
    throw Error(ErrorCode::kDimMismatch, "empty text classifier");
  }
  if (meta["num_classes"].get<std::int64_t>() != raw.header.dim) {
    throw Error(ErrorCode::kDimMismatch, "num_classes differs from classifier column count");
  }
  TextClassifier text;
  text.weights = to_matrix(raw);
  if (meta.contains("class_names")) {
    if (!meta["class_names"].is_array() || meta["class_names"].size() != raw.header.dim) {
      throw Error(ErrorCode::kBadMetadata, "class_names must list one name per class");
    }
    text.class_names = meta["class_names"].get<std::vector<std::string>>();
  }
  text.metadata = std::move(meta);
  const Vector norms = text.column_norms();
  text.metadata["column_norms"] = std::vector<double>(norms.data(), norms.data() + norms.size());
  return text;
}

TextClassifier load_text_classifier(const std::filesystem::path& path) {
  return decode_text_classifier(read_file_bytes(path));
}

void save_text_classifier(const TextClassifier& text, const std::filesystem::path& path) {
  write_file_bytes(path, encode_text_classifier(text));
}

FeatureSet l2_normalize(const FeatureSet& fs) {
  FeatureSet out = fs;
  for (Index i = 0; i < out.rows(); ++i) {
    const double norm = out.data.row(i).norm();
    if (norm < kZeroNorm) {
      throw Error(ErrorCode::kZeroNormRow, "row " + std::to_string(i) + " has zero norm");
    }
    out.data.row(i) /= norm;
  }
  out.normalized = true;
  return out;
}

OneHotLabels one_hot(const FeatureSet& fs) {
  OneHotLabels out{Matrix::Zero(static_cast<Index>(fs.labels.size()), fs.num_classes)};
  for (std::size_t i = 0; i < fs.labels.size(); ++i) {
    const std::int32_t label = fs.labels[i];
    if (label < 0 || label >= fs.num_classes) {
      throw Error(ErrorCode::kCorruptLabel, "label " + std::to_string(label) + " out of range");
    }
    out.values(static_cast<Index>(i), label) = 1.0;
  }
  return out;
}

FewShotTask sample_task(const FeatureSet& pool, const TextClassifier& text, int shots,
                        double query_fraction, std::uint64_t seed, double validation_fraction) {
  if (!pool.has_labels()) throw Error(ErrorCode::kCorruptLabel, "task pool must be labeled");
  if (shots < 1) throw Error(ErrorCode::kInvalidConfig, "shots must be >= 1");
  if (!(query_fraction > 0.0 && query_fraction <= 1.0) ||
      !(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "split fractions must lie in (0,1] and [0,1)");
  }
  if (text.dim() != pool.dim()) {
    throw Error(ErrorCode::kDimMismatch, "text classifier dim differs from feature dim");
  }
  if (text.num_classes() != pool.num_classes) {
    throw Error(ErrorCode::kDimMismatch, "text classifier class count differs from pool");
  }

  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(pool.num_classes));
  for (std::size_t i = 0; i < pool.labels.size(); ++i) {
    by_class[static_cast<std::size_t>(pool.labels[i])].push_back(static_cast<Index>(i));
  }

  std::mt19937_64 rng(seed);
  std::vector<Index> support, validation, query;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (static_cast<int>(members.size()) < shots + 1) {
      throw Error(ErrorCode::kInsufficientSamples,
                  "class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                      " samples, need " + std::to_string(shots + 1));
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto rest = members.size() - static_cast<std::size_t>(shots);
    const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * rest));
    const auto n_query = std::min(
        rest - n_val, static_cast<std::size_t>(std::ceil(query_fraction * (rest - n_val))));
    auto it = members.begin();
    support.insert(support.end(), it, it + shots);
    it += shots;
    validation.insert(validation.end(), it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    query.insert(query.end(), it, it + static_cast<std::ptrdiff_t>(n_query));
  }

  FewShotTask task;
  task.support = pool.subset(support);
  task.query = pool.subset(query);
  if (!validation.empty()) task.validation = pool.subset(validation);
  task.text = text;
  task.shots = shots;
  task.seed = seed;
  return task;
}

}  // namespace proker
