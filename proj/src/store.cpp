#include "opembed/store.hpp"

#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

namespace opembed {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(BundleKind k) {
  switch (k) {
  case BundleKind::Schema:
    return "schema";
  case BundleKind::Encoder:
    return "encoder";
  case BundleKind::Pca:
    return "pca";
  case BundleKind::Fa:
    return "fa";
  case BundleKind::Classifier:
    return "classifier";
  }
  return "schema";
}

BundleKind bundle_kind_from_string(const std::string &s) {
  for (auto k : {BundleKind::Schema, BundleKind::Encoder, BundleKind::Pca, BundleKind::Fa, BundleKind::Classifier})
    if (to_string(k) == s)
      return k;
  throw Error("bundle", "unknown bundle kind '" + s + "'");
}

namespace {

template <typename T> void put_le(std::string &out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T> T get_le(std::string_view bytes, std::size_t &pos) {
  if (bytes.size() - pos < sizeof(T))
    throw Error("bundle", "truncated bundle");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

} // namespace

std::string serialize_bundle(const Bundle &b) {
  json header{{"kind", to_string(b.kind)},
              {"schema_hash", b.schema_hash},
              {"metadata", b.metadata},
              {"payload", b.payload.meta}};
  std::string text = header.dump();
  std::string out(kBundleMagic);
  put_le<std::uint32_t>(out, kBundleVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_le<std::uint64_t>(out, b.payload.reals.size());
  out.reserve(out.size() + 8 * b.payload.reals.size());
  for (double d : b.payload.reals)
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
  return out;
}

Bundle parse_bundle(std::string_view bytes) {
  if (bytes.size() < kBundleMagic.size() || bytes.substr(0, kBundleMagic.size()) != kBundleMagic)
    throw Error("bundle", "not a model bundle (bad magic)");
  std::size_t pos = kBundleMagic.size();
  auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kBundleVersion)
    throw Error("bundle", "unsupported bundle version " + std::to_string(version) + " (expected " +
                              std::to_string(kBundleVersion) + ")");
  auto header_len = get_le<std::uint64_t>(bytes, pos);
  if (bytes.size() - pos < header_len)
    throw Error("bundle", "truncated bundle header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, header_len));
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("corrupt bundle header: ") + e.what());
  }
  pos += header_len;
  auto count = get_le<std::uint64_t>(bytes, pos);
  if ((bytes.size() - pos) / 8 < count || bytes.size() - pos != 8 * count)
    throw Error("bundle", "weight block length does not match its count");
  Bundle b;
  try {
    b.kind = bundle_kind_from_string(header.at("kind").get<std::string>());
    b.schema_hash = header.at("schema_hash").get<std::string>();
    b.metadata = header.at("metadata");
    b.payload.meta = header.at("payload");
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("incomplete bundle header: ") + e.what());
  }
  b.payload.reals.resize(count);
  for (auto &d : b.payload.reals)
    d = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  return b;
}

void write_file_atomic(const fs::path &path, std::string_view bytes) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("io", "cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw Error("io", "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("io", "cannot rename onto '" + path.string() + "'");
  }
}

void save_bundle(const fs::path &path, const Bundle &b) { write_file_atomic(path, serialize_bundle(b)); }

Bundle load_bundle(const fs::path &path, std::optional<BundleKind> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("io", "cannot read bundle '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Bundle b = parse_bundle(ss.str());
  if (expected && b.kind != *expected)
    throw Error("bundle", "'" + path.string() + "' is a " + to_string(b.kind) + " bundle, expected " +
                              to_string(*expected));
  return b;
}

fs::path resolve_store_path(const std::string &name) {
  fs::path p(name);
  const char *dir = std::getenv("OPEMBED_STORE");
  if (dir && *dir && p.is_relative() && !p.has_parent_path())
    return fs::path(dir) / p;
  return p;
}

void require_schema_hash(const std::string &expected, const std::string &actual, const std::string &what) {
  if (expected != actual)
    throw Error("hash_mismatch", what + " expects schema " + expected + " but got schema " + actual);
}

Bundle make_schema_bundle(const FeatureSchema &schema, json metadata) {
  Bundle b;
  b.kind = BundleKind::Schema;
  b.schema_hash = schema.hash();
  b.metadata = std::move(metadata);
  b.payload.meta = schema.to_json();
  return b;
}

FeatureSchema schema_from_bundle(const Bundle &b) {
  if (b.kind != BundleKind::Schema)
    throw Error("bundle", "expected a schema bundle, got " + to_string(b.kind));
  FeatureSchema s = FeatureSchema::from_json(b.payload.meta);
  require_schema_hash(b.schema_hash, s.hash(), "schema bundle header");
  return s;
}

Payload network_to_payload(const nn::Network &net) {
  Payload p;
  json layers = json::array();
  for (const auto &l : net.layers) {
    json j{{"weight", p.put(l.weight)}, {"bias", p.put(l.bias)}, {"layer_norm", l.layer_norm}, {"relu", l.relu}};
    if (l.layer_norm) {
      j["ln_gain"] = p.put(l.ln_gain);
      j["ln_bias"] = p.put(l.ln_bias);
    }
    layers.push_back(std::move(j));
  }
  p.meta["layers"] = std::move(layers);
  return p;
}

nn::Network network_from_payload(const Payload &p, const json &meta) {
  nn::Network net;
  try {
    for (const auto &j : meta.at("layers")) {
      nn::DenseLayer l;
      l.weight = p.get_matrix(j.at("weight"));
      l.bias = p.get_vector(j.at("bias"));
      l.layer_norm = j.at("layer_norm").get<bool>();
      l.relu = j.at("relu").get<bool>();
      if (l.layer_norm) {
        l.ln_gain = p.get_vector(j.at("ln_gain"));
        l.ln_bias = p.get_vector(j.at("ln_bias"));
      }
      net.layers.push_back(std::move(l));
    }
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("malformed network payload: ") + e.what());
  }
  net.validate();
  return net;
}

Bundle make_encoder_bundle(const Encoder &encoder, json metadata) {
  Bundle b;
  b.kind = BundleKind::Encoder;
  b.schema_hash = encoder.schema_hash;
  b.metadata = std::move(metadata);
  b.payload = network_to_payload(encoder.trunk);
  b.payload.meta["output"] = encoder.output == EmbeddingOutput::PreActivation ? "pre_activation" : "post_activation";
  return b;
}

Encoder encoder_from_bundle(const Bundle &b) {
  if (b.kind != BundleKind::Encoder)
    throw Error("bundle", "expected an encoder bundle, got " + to_string(b.kind));
  Encoder e;
  e.trunk = network_from_payload(b.payload, b.payload.meta);
  e.schema_hash = b.schema_hash;
  e.output = b.payload.meta.value("output", "post_activation") == "pre_activation" ? EmbeddingOutput::PreActivation
                                                                                    : EmbeddingOutput::PostActivation;
  return e;
}

Bundle make_reducer_bundle(const PcaModel &pca, const std::string &schema_hash, json metadata) {
  Bundle b{BundleKind::Pca, schema_hash, std::move(metadata), to_payload(pca)};
  return b;
}

Bundle make_reducer_bundle(const FaModel &fa, const std::string &schema_hash, json metadata) {
  Bundle b{BundleKind::Fa, schema_hash, std::move(metadata), to_payload(fa)};
  return b;
}

PcaModel pca_from_bundle(const Bundle &b) {
  if (b.kind != BundleKind::Pca)
    throw Error("bundle", "expected a pca bundle, got " + to_string(b.kind));
  return pca_from_payload(b.payload);
}

FaModel fa_from_bundle(const Bundle &b) {
  if (b.kind != BundleKind::Fa)
    throw Error("bundle", "expected an fa bundle, got " + to_string(b.kind));
  return fa_from_payload(b.payload);
}

Bundle make_classifier_bundle(const TaskModel &m, json metadata) {
  if (!m.classifier)
    throw Error("bundle", "task model has no classifier");
  Bundle b;
  b.kind = BundleKind::Classifier;
  b.schema_hash = m.schema_hash;
  b.metadata = std::move(metadata);
  b.payload = m.classifier->to_payload();
  b.metadata["task"] = to_string(m.task);
  b.metadata["model"] = to_string(m.model);
  b.metadata["featurization"] = m.featurization;
  b.metadata["feature_source"] = m.feature_source;
  b.metadata["classes"] = m.classes;
  b.metadata["threshold"] = m.threshold;
  b.metadata["input_dim"] = m.classifier->input_dim();
  return b;
}

TaskModel task_model_from_bundle(const Bundle &b) {
  if (b.kind != BundleKind::Classifier)
    throw Error("bundle", "expected a classifier bundle, got " + to_string(b.kind));
  TaskModel m;
  try {
    m.task = task_kind_from_string(b.metadata.at("task").get<std::string>());
    m.model = model_kind_from_string(b.metadata.at("model").get<std::string>());
    m.featurization = b.metadata.at("featurization").get<std::string>();
    m.feature_source = b.metadata.at("feature_source").get<std::string>();
    m.classes = b.metadata.at("classes").get<std::vector<std::string>>();
    m.threshold = b.metadata.at("threshold").get<double>();
  } catch (const json::exception &e) {
    throw Error("bundle", std::string("classifier bundle metadata incomplete: ") + e.what());
  }
  m.schema_hash = b.schema_hash;
  m.classifier = classifier_from_payload(m.model, b.payload);
  if (m.classifier->num_classes() != m.classes.size())
    throw Error("bundle", "classifier class count does not match its class names");
  return m;
}

} // namespace opembed
