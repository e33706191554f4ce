#include "proker/container.hpp"

#include <cstring>
#include <map>

#include "proker/error.hpp"

namespace proker {

namespace {

constexpr char kMagic[4] = {'P', 'K', 'M', '1'};

using Bytes = std::vector<std::uint8_t>;

void put_uint(Bytes& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_uint(const Bytes& in, std::size_t& pos, int width) {
  if (in.size() - pos < static_cast<std::size_t>(width)) {
    throw Error(ErrorCode::kDimMismatch, "model container truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{in[pos + static_cast<std::size_t>(i)]} << (8 * i);
  pos += static_cast<std::size_t>(width);
  return v;
}

struct Container {
  nlohmann::json header;
  std::map<std::string, Bytes> blocks;
};

Bytes encode_container(const nlohmann::json& header,
                       const std::vector<std::pair<std::string, Bytes>>& blocks) {
  Bytes out(std::begin(kMagic), std::end(kMagic));
  const std::string json = header.dump();
  put_uint(out, json.size(), 4);
  out.insert(out.end(), json.begin(), json.end());
  put_uint(out, blocks.size(), 4);
  for (const auto& [name, payload] : blocks) {
    put_uint(out, name.size(), 4);
    out.insert(out.end(), name.begin(), name.end());
    put_uint(out, payload.size(), 8);
    out.insert(out.end(), payload.begin(), payload.end());
  }
  return out;
}

Container decode_container(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "missing PKM1 magic");
  }
  std::size_t pos = 4;
  Container c;
  auto take = [&](std::uint64_t n) {
    if (bytes.size() - pos < n) throw Error(ErrorCode::kDimMismatch, "model container truncated");
    const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(pos);
    pos += static_cast<std::size_t>(n);
    return Bytes(first, first + static_cast<std::ptrdiff_t>(n));
  };
  const Bytes json = take(get_uint(bytes, pos, 4));
  c.header = nlohmann::json::parse(json.begin(), json.end(), nullptr, false);
  if (c.header.is_discarded() || !c.header.is_object()) {
    throw Error(ErrorCode::kBadMetadata, "model header is not a JSON object");
  }
  const std::uint64_t count = get_uint(bytes, pos, 4);
  for (std::uint64_t i = 0; i < count; ++i) {
    const Bytes name = take(get_uint(bytes, pos, 4));
    c.blocks[std::string(name.begin(), name.end())] = take(get_uint(bytes, pos, 8));
  }
  if (pos != bytes.size()) throw Error(ErrorCode::kDimMismatch, "trailing bytes after model blocks");
  return c;
}

const Bytes& block(const Container& c, const std::string& name) {
  auto it = c.blocks.find(name);
  if (it == c.blocks.end()) throw Error(ErrorCode::kBadMetadata, "model lacks block '" + name + "'");
  return it->second;
}

Bytes matrix_block(const Matrix& m, const std::string& role) {
  FeatureSet fs;
  fs.data = m;
  fs.num_classes = 0;
  fs.metadata["block"] = role;
  return encode_featureset(fs);
}

Matrix read_matrix_block(const Container& c, const std::string& name) {
  return decode_featureset(block(c, name)).data;
}

void expect_kind(const Container& c, const std::string& kind) {
  if (c.header.value("kind", std::string{}) != kind) {
    throw Error(ErrorCode::kBadMetadata, "model container is not of kind '" + kind + "'");
  }
}

}  // namespace

Bytes encode_proker_model(const ProKeRModel& model) {
  nlohmann::json header;
  header["kind"] = "proker";
  header["lambda"] = model.lambda;
  header["jitter"] = model.jitter;
  header["text_scale"] = model.text_scale;
  header["kernel"] = model.kernel.to_json();
  return encode_container(header, {{"support", encode_featureset(model.support)},
                                   {"gamma", matrix_block(model.gamma, "gamma")},
                                   {"text", encode_text_classifier(model.text)}});
}

ProKeRModel decode_proker_model(const Bytes& bytes) {
  const Container c = decode_container(bytes);
  expect_kind(c, "proker");
  ProKeRModel model;
  try {
    model.lambda = c.header.at("lambda").get<double>();
    model.jitter = c.header.value("jitter", 1e-8);
    model.text_scale = c.header.value("text_scale", 1.0);
    model.kernel = KernelSpec::from_json(c.header.at("kernel"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("model header: ") + e.what());
  }
  model.support = decode_featureset(block(c, "support"));
  model.gamma = read_matrix_block(c, "gamma");
  model.text = decode_text_classifier(block(c, "text"));
  if (model.gamma.rows() != model.support.rows() ||
      model.gamma.cols() != model.text.num_classes() || model.text.dim() != model.support.dim()) {
    throw Error(ErrorCode::kDimMismatch, "model blocks have inconsistent shapes");
  }
  return model;
}

void save_proker_model(const ProKeRModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_proker_model(model));
}

ProKeRModel load_proker_model(const std::filesystem::path& path) {
  return decode_proker_model(read_file_bytes(path));
}

Bytes encode_prototype_model(const PrototypeModel& model) {
  nlohmann::json header;
  header["kind"] = "prototype";
  header["lambda"] = model.lambda;
  header["text_scale"] = model.text_scale;
  header["map"] = {{"beta", model.map.beta},
                   {"seed", model.map.seed},
                   {"orthogonal", model.map.orthogonal},
                   {"count", model.map.count()},
                   {"dim", model.map.dim()}};
  return encode_container(header, {{"prototypes", matrix_block(model.prototypes, "prototypes")},
                                   {"frequencies", matrix_block(model.map.frequencies, "frequencies")},
                                   {"phases", matrix_block(model.map.phases, "phases")},
                                   {"text", encode_text_classifier(model.text)}});
}

PrototypeModel decode_prototype_model(const Bytes& bytes) {
  const Container c = decode_container(bytes);
  expect_kind(c, "prototype");
  PrototypeModel model;
  try {
    model.lambda = c.header.at("lambda").get<double>();
    model.text_scale = c.header.value("text_scale", 1.0);
    const auto& map = c.header.at("map");
    model.map.beta = map.at("beta").get<double>();
    model.map.seed = map.at("seed").get<std::uint64_t>();
    model.map.orthogonal = map.at("orthogonal").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("model header: ") + e.what());
  }
  model.prototypes = read_matrix_block(c, "prototypes");
  model.map.frequencies = read_matrix_block(c, "frequencies");
  model.map.phases = read_matrix_block(c, "phases").col(0);
  model.text = decode_text_classifier(block(c, "text"));
  if (model.map.phases.size() != model.map.count() || model.prototypes.rows() != model.map.count() ||
      model.prototypes.cols() != model.text.num_classes() ||
      model.map.dim() != model.text.dim()) {
    throw Error(ErrorCode::kDimMismatch, "model blocks have inconsistent shapes");
  }
  return model;
}

void save_prototype_model(const PrototypeModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_prototype_model(model));
}

PrototypeModel load_prototype_model(const std::filesystem::path& path) {
  return decode_prototype_model(read_file_bytes(path));
}

std::size_t stored_numbers(const ProKeRModel& model) {
  // Cached shots with labels plus the text classifier.
  return static_cast<std::size_t>(model.support.data.size() + model.support.rows() +
                                  model.text.weights.size());
}

std::size_t stored_numbers(const PrototypeModel& model) {
  return static_cast<std::size_t>(model.prototypes.size() + model.text.weights.size());
}

nlohmann::json inspect_file(const std::filesystem::path& path) {
  const Bytes bytes = read_file_bytes(path);
  nlohmann::json out;
  out["path"] = path.string();
  out["bytes"] = bytes.size();
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "FSF1", 4) == 0) {
    const FsfHeader h = read_fsf_header(bytes);
    out["format"] = "FSF1";
    out["rows"] = h.rows;
    out["dim"] = h.dim;
    out["flags"] = {{"has_labels", h.has_labels}, {"normalized", h.normalized}};
    out["metadata"] = h.metadata;
    return out;
  }
  const Container c = decode_container(bytes);
  out["format"] = "PKM1";
  out["header"] = c.header;
  nlohmann::json blocks = nlohmann::json::object();
  for (const auto& [name, payload] : c.blocks) {
    const FsfHeader h = read_fsf_header(payload);
    blocks[name] = {{"rows", h.rows}, {"dim", h.dim}, {"bytes", payload.size()}};
  }
  out["blocks"] = blocks;
  return out;
}

}  // namespace proker
