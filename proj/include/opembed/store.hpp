#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "opembed/classifiers.hpp"
#include "opembed/featurizer.hpp"
#include "opembed/hourglass.hpp"
#include "opembed/payload.hpp"
#include "opembed/reducers.hpp"
#include "opembed/tasks.hpp"

namespace opembed {

inline constexpr std::string_view kBundleMagic{"OPEMBED\x01", 8};
inline constexpr std::uint32_t kBundleVersion = 1;

enum class BundleKind { Schema, Encoder, Pca, Fa, Classifier };

std::string to_string(BundleKind k);
BundleKind bundle_kind_from_string(const std::string &s);

/// One file: magic, u32 version, u64 header length, JSON header, u64 real
/// count, little-endian f64 block.
struct Bundle {
  BundleKind kind = BundleKind::Schema;
  std::string schema_hash;
  nlohmann::json metadata = nlohmann::json::object();
  Payload payload;
};

std::string serialize_bundle(const Bundle &b);
Bundle parse_bundle(std::string_view bytes);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path &path, std::string_view bytes);
void save_bundle(const std::filesystem::path &path, const Bundle &b);
Bundle load_bundle(const std::filesystem::path &path, std::optional<BundleKind> expected = std::nullopt);

/// Bare file names resolve under $OPEMBED_STORE when it is set.
std::filesystem::path resolve_store_path(const std::string &name);

/// Throws "hash_mismatch" naming both hashes.
void require_schema_hash(const std::string &expected, const std::string &actual, const std::string &what);

Bundle make_schema_bundle(const FeatureSchema &schema, nlohmann::json metadata = nlohmann::json::object());
FeatureSchema schema_from_bundle(const Bundle &b);

Payload network_to_payload(const nn::Network &net);
nn::Network network_from_payload(const Payload &p, const nlohmann::json &meta);

Bundle make_encoder_bundle(const Encoder &encoder, nlohmann::json metadata = nlohmann::json::object());
Encoder encoder_from_bundle(const Bundle &b);

Bundle make_reducer_bundle(const PcaModel &pca, const std::string &schema_hash,
                           nlohmann::json metadata = nlohmann::json::object());
Bundle make_reducer_bundle(const FaModel &fa, const std::string &schema_hash,
                           nlohmann::json metadata = nlohmann::json::object());
PcaModel pca_from_bundle(const Bundle &b);
FaModel fa_from_bundle(const Bundle &b);

/// A trained task model plus what it needs at prediction time.
struct TaskModel {
  TaskKind task = TaskKind::Admission;
  ModelKind model = ModelKind::LogReg;
  std::string featurization;    // e.g. "neural-32"
  std::string schema_hash;
  std::string feature_source;   // content hash of the encoder/reducer bundle, empty for sparse
  std::vector<std::string> classes;
  double threshold = 0.0;       // admission latency threshold
  std::unique_ptr<Classifier> classifier;
};

Bundle make_classifier_bundle(const TaskModel &m, nlohmann::json metadata = nlohmann::json::object());
TaskModel task_model_from_bundle(const Bundle &b);

} // namespace opembed
