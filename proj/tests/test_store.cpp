#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "opembed/store.hpp"
#include "opembed/synth.hpp"

using namespace opembed;
namespace fs = std::filesystem;

namespace {

struct Setup {
  Corpus corpus;
  FeatureSchema schema;
  Setup() {
    SynthConfig cfg;
    cfg.n_queries = 20;
    corpus = generate(cfg);
    schema = build_schema(corpus);
  }
};

fs::path scratch() {
  fs::path p = fs::temp_directory_path() / "opembed_store_test";
  fs::create_directories(p);
  return p;
}

} // namespace

TEST_CASE("every bundle kind round-trips byte for byte") {
  Setup s;
  HourglassSpec hs;
  hs.hidden_dims = {16, 8};
  hs.embedding_dim = 4;
  Encoder enc = cut_off(build_hourglass(hs, s.schema), EmbeddingOutput::PreActivation);
  Matrix rows = encode_corpus(s.schema, s.corpus);
  PcaModel pca = fit_pca(rows, 3);
  FaModel fa = fit_fa(rows, 5);
  LabeledSet set;
  set.features = rows;
  set.classes = {"a", "b"};
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    set.labels.push_back(static_cast<int>(i % 2));
  TaskModel tm;
  tm.task = TaskKind::Admission;
  tm.model = ModelKind::RandomForest;
  tm.featurization = "sparse";
  tm.schema_hash = s.schema.hash();
  tm.classes = set.classes;
  tm.threshold = 12.5;
  ForestParams fp;
  fp.trees = 3;
  tm.classifier = train_rf(set, fp);

  std::vector<Bundle> bundles{make_schema_bundle(s.schema), make_encoder_bundle(enc),
                              make_reducer_bundle(pca, s.schema.hash()), make_reducer_bundle(fa, s.schema.hash()),
                              make_classifier_bundle(tm)};
  for (const auto &b : bundles) {
    std::string bytes = serialize_bundle(b);
    CHECK(bytes.substr(0, 8) == std::string(kBundleMagic));
    CHECK(serialize_bundle(parse_bundle(bytes)) == bytes);
    fs::path p = scratch() / ("b_" + to_string(b.kind));
    save_bundle(p, b);
    CHECK(serialize_bundle(load_bundle(p, b.kind)) == bytes);
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
  }

  CHECK(schema_from_bundle(bundles[0]) == s.schema);
  CHECK(schema_from_bundle(bundles[0]).hash() == s.schema.hash());
  CHECK(encoder_from_bundle(bundles[1]) == enc);
  CHECK(pca_from_bundle(bundles[2]).components == pca.components);
  CHECK(fa_from_bundle(bundles[3]).clusters == fa.clusters);
  TaskModel back = task_model_from_bundle(bundles[4]);
  CHECK(back.threshold == 12.5);
  CHECK(back.classes == tm.classes);
  CHECK(back.model == ModelKind::RandomForest);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Vector x = rows.row(i).transpose();
    CHECK(back.classifier->predict(x) == tm.classifier->predict(x));
  }
  CHECK_THROWS_AS(load_bundle(scratch() / "b_schema", BundleKind::Encoder), Error);
}

TEST_CASE("corrupt bundles are rejected") {
  Setup s;
  std::string bytes = serialize_bundle(make_schema_bundle(s.schema));
  auto code_of = [](const std::string &b) {
    try {
      parse_bundle(b);
    } catch (const Error &e) {
      return e.code();
    }
    return std::string("none");
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of(bad_magic) != "none");
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK(code_of(bad_version) != "none");
  CHECK(code_of(bytes.substr(0, bytes.size() - 3)) != "none");
  CHECK(code_of(bytes + "x") != "none");
  CHECK(code_of("") != "none");
}

TEST_CASE("schema hash mismatch names both hashes") {
  try {
    require_schema_hash("aaaa", "bbbb", "encoder");
    FAIL("expected mismatch");
  } catch (const Error &e) {
    CHECK(e.code() == "hash_mismatch");
    std::string w = e.what();
    CHECK(w.find("aaaa") != std::string::npos);
    CHECK(w.find("bbbb") != std::string::npos);
  }
  CHECK_NOTHROW(require_schema_hash("aaaa", "aaaa", "encoder"));
}

TEST_CASE("bare names resolve under the store directory") {
  fs::path dir = scratch() / "store";
  ::setenv("OPEMBED_STORE", dir.c_str(), 1);
  CHECK(resolve_store_path("model.bundle") == dir / "model.bundle");
  CHECK(resolve_store_path("sub/model.bundle") == fs::path("sub/model.bundle"));
  CHECK(resolve_store_path("/abs/model.bundle") == fs::path("/abs/model.bundle"));
  ::unsetenv("OPEMBED_STORE");
  CHECK(resolve_store_path("model.bundle") == fs::path("model.bundle"));
}
