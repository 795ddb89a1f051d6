#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "crs/analysis.hpp"
#include "crs/data_io.hpp"
#include "testutil.hpp"

using namespace crs;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path test_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "crs_data_io_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

Cifar10RawBatch synthetic_batch(int records, uint64_t seed) {
  Rng rng(seed);
  Cifar10RawBatch b;
  b.labels.resize(static_cast<size_t>(records));
  b.pixels.resize(static_cast<size_t>(records) * 3072);
  for (int i = 0; i < records; ++i) {
    b.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(rng.uniform_int(10));
    for (int p = 0; p < 3072; ++p)
      b.pixels[static_cast<size_t>(i) * 3072 + p] =
          static_cast<uint8_t>(rng.uniform_int(256));
  }
  return b;
}

FeatureSet sample_feature_set(int n) {
  Rng rng(42);
  FeatureSet fs_out;
  FeatureTap t0;
  t0.layer_index = 0;
  t0.name = "input";
  t0.features = crstest::random_tensor<float>(rng, {n, 2, 3, 3});
  FeatureTap t1;
  t1.layer_index = 1;
  t1.name = "logits";
  t1.features = crstest::random_tensor<float>(rng, {n, 4});
  fs_out.taps = {t0, t1};
  for (int i = 0; i < n; ++i) fs_out.labels.push_back(i % 4);
  return fs_out;
}

}  // namespace

TEST_CASE("cifar batch raw round trip is byte identical") {
  const auto path = (test_dir() / "round.bin").string();
  Cifar10RawBatch batch = synthetic_batch(100, 1);
  write_cifar10_batch(batch, path);
  Cifar10RawBatch back = read_cifar10_batch(path, 100);
  CHECK(back.labels == batch.labels);
  CHECK(back.pixels == batch.pixels);
  CHECK(back.labels[0] <= 9);

  const auto path2 = (test_dir() / "round2.bin").string();
  write_cifar10_batch(back, path2);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("cifar batch size validation names the expected byte count") {
  const auto path = (test_dir() / "short.bin").string();
  write_bytes(path, std::string(5000, 'x'));
  try {
    read_cifar10_batch(path);  // default: 10000 records
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind == IoError::Kind::bad_size);
    CHECK(std::string(e.what()).find("30,730,000") != std::string::npos);
  }
}

TEST_CASE("cifar batch rejects label bytes outside 0-9") {
  const auto path = (test_dir() / "badlabel.bin").string();
  Cifar10RawBatch batch = synthetic_batch(10, 2);
  batch.labels[3] = 17;
  write_cifar10_batch(batch, path);
  try {
    read_cifar10_batch(path, 10);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind == IoError::Kind::bad_format);
  }
}

TEST_CASE("full cifar10 load: shapes, classes, train-split normalization") {
  const fs::path dir = test_dir() / "cifar";
  fs::create_directories(dir);
  for (int b = 1; b <= 5; ++b)
    write_cifar10_batch(synthetic_batch(10000, static_cast<uint64_t>(b)),
                        (dir / strf("data_batch_%d.bin", b)).string());
  // test split with a very different distribution: constant pixel value 200
  Cifar10RawBatch test_batch = synthetic_batch(10000, 99);
  std::fill(test_batch.pixels.begin(), test_batch.pixels.end(), static_cast<uint8_t>(200));
  write_cifar10_batch(test_batch, (dir / "test_batch.bin").string());

  Cifar10 data = load_cifar10_binary(dir.string());
  CHECK(data.train.size() == 50000);
  CHECK(data.train.images.shape() == Shape{50000, 3, 32, 32});
  CHECK(data.train.class_count == 10);
  CHECK(data.test.size() == 10000);

  // train split standardizes to ~zero mean, unit variance per channel
  const size_t plane = 32 * 32, per_img = 3 * plane;
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (size_t i = 0; i < 50000; ++i) {
      const float* xc = data.train.images.data() + i * per_img + c * plane;
      for (size_t p = 0; p < plane; ++p) {
        s += xc[p];
        s2 += static_cast<double>(xc[p]) * xc[p];
      }
    }
    const double n = 50000.0 * plane;
    CHECK(std::abs(s / n) < 1e-3);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-3));
    // the test split was constant 200/255, so under train stats it maps to
    // (200/255 - mean_c) / std_c uniformly, nowhere near zero mean
    const double expect =
        (200.0 / 255.0 - data.mean[static_cast<size_t>(c)]) / data.stddev[static_cast<size_t>(c)];
    CHECK(data.test.images.at4(0, c, 0, 0) == doctest::Approx(expect).epsilon(1e-4));
    CHECK(std::abs(expect) > 0.1);
  }
  fs::remove_all(dir);
}

TEST_CASE("synth_blobs: determinism, chance at zero separation signal, high CS when wide") {
  LabeledDataset a = synth_blobs(4, 25, 8, 3, 7, 4.0);
  LabeledDataset b = synth_blobs(4, 25, 8, 3, 7, 4.0);
  REQUIRE(a.size() == 100);
  for (long i = 0; i < a.images.numel(); ++i) REQUIRE(a.images.data()[i] == b.images.data()[i]);
  REQUIRE(a.labels == b.labels);

  // widely separated classes: raw-pixel identity-scale CS is ~1
  LabeledDataset wide = synth_blobs(2, 100, 8, 3, 11, 12.0);
  const double cs =
      class_similarity(build_knn(wide.images, 10, Metric::euclidean), wide.labels);
  CHECK(cs >= 0.99);

  // zero separation: identical class distributions, CS near chance (1/classes)
  LabeledDataset flat = synth_blobs(4, 100, 8, 3, 13, 0.0);
  const double cs0 =
      class_similarity(build_knn(flat.images, 10, Metric::euclidean), flat.labels);
  CHECK(cs0 < 0.35);
  CHECK(cs0 > 0.15);

  CHECK_THROWS_AS(synth_blobs(1, 10, 8, 3, 7, 1.0), ValueError);
}

TEST_CASE("stratified_subset balances classes and keeps order") {
  LabeledDataset ds = synth_blobs(4, 50, 4, 1, 3, 2.0);
  LabeledDataset sub = stratified_subset(ds, 40);
  REQUIRE(sub.size() == 40);
  std::vector<int> counts(4, 0);
  for (int label : sub.labels) counts[static_cast<size_t>(label)]++;
  for (int c : counts) CHECK(c == 10);
  LabeledDataset all = stratified_subset(ds, 0);
  CHECK(all.size() == ds.size());
}

TEST_CASE("feature dump round trip is lossless") {
  const auto path = (test_dir() / "feat.crsf").string();
  FeatureSet fs_in = sample_feature_set(6);
  write_feature_dump(fs_in, path);
  FeatureSet back = read_feature_dump(path);
  REQUIRE(back.taps.size() == fs_in.taps.size());
  CHECK(back.labels == fs_in.labels);
  for (size_t t = 0; t < back.taps.size(); ++t) {
    CHECK(back.taps[t].layer_index == fs_in.taps[t].layer_index);
    CHECK(back.taps[t].name == fs_in.taps[t].name);
    REQUIRE(back.taps[t].features.shape() == fs_in.taps[t].features.shape());
    for (long i = 0; i < back.taps[t].features.numel(); ++i)
      REQUIRE(back.taps[t].features.data()[i] == fs_in.taps[t].features.data()[i]);
  }
}

TEST_CASE("feature dump: zero taps is valid; bad magic and dim lies are typed errors") {
  const auto path = (test_dir() / "empty.crsf").string();
  FeatureSet empty;
  empty.labels = {1, 2, 3};
  write_feature_dump(empty, path);
  FeatureSet back = read_feature_dump(path);
  CHECK(back.taps.empty());
  CHECK(back.labels == std::vector<int>{1, 2, 3});

  const auto bad_path = (test_dir() / "bad.crsf").string();
  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(bad_path, bytes);
  try {
    read_feature_dump(bad_path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind == IoError::Kind::bad_magic);
  }

  // oversized dim claim -> dim_mismatch (tap dim bytes start after
  // magic(4)+version(2)+count(2)+name_len(2)+name(5)+rank(1))
  FeatureSet fs_in = sample_feature_set(2);
  const auto dim_path = (test_dir() / "dim.crsf").string();
  write_feature_dump(fs_in, dim_path);
  std::string dim_bytes = read_bytes(dim_path);
  const size_t dim_off = 4 + 2 + 2 + 2 + 5 + 1;
  dim_bytes[dim_off + 0] = static_cast<char>(0xFF);
  dim_bytes[dim_off + 1] = static_cast<char>(0xFF);
  dim_bytes[dim_off + 2] = static_cast<char>(0xFF);
  dim_bytes[dim_off + 3] = 0x0F;
  write_bytes(dim_path, dim_bytes);
  try {
    read_feature_dump(dim_path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind == IoError::Kind::dim_mismatch);
  }
}

TEST_CASE("feature dump survives truncation at every byte offset") {
  const auto path = (test_dir() / "fuzzbase.crsf").string();
  write_feature_dump(sample_feature_set(2), path);
  const std::string bytes = read_bytes(path);
  const auto trunc_path = (test_dir() / "trunc.crsf").string();
  for (size_t len = 0; len < bytes.size(); ++len) {
    write_bytes(trunc_path, bytes.substr(0, len));
    CHECK_THROWS_AS(read_feature_dump(trunc_path), IoError);
  }
}

TEST_CASE("cs csv: row count, parse-back, byte-identical re-export") {
  CSCurveSet curves;
  curves.scales = default_scales();
  Rng rng(5);
  for (int i = 0; i < 13; ++i) {
    curves.layer_indices.push_back(i);
    curves.layer_names.push_back(i == 0 ? "input" : strf("tap%d", i));
    std::vector<double> row;
    for (int s = 0; s < 5; ++s) row.push_back(rng.uniform());
    curves.values.push_back(row);
  }
  const auto path = (test_dir() / "cs.csv").string();
  write_cs_csv(curves, path);

  std::ifstream in(path);
  std::string line;
  int rows = 0;
  std::getline(in, line);
  CHECK(line == "layer_index,layer_name,scale,cs");
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 65);

  CSCurveSet back = read_cs_csv(path);
  CHECK(back.layer_count() == 13);
  CHECK(back.scale_count() == 5);
  for (size_t i = 0; i < back.layer_count(); ++i)
    for (size_t s = 0; s < back.scale_count(); ++s) {
      CHECK(back.values[i][s] >= 0.0);
      CHECK(back.values[i][s] <= 1.0);
      CHECK(back.values[i][s] == doctest::Approx(curves.values[i][s]).epsilon(1e-5));
    }

  const auto path2 = (test_dir() / "cs2.csv").string();
  write_cs_csv(back, path2);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("checkpoint: save/load restores bitwise-identical behavior") {
  ModelSpec spec;
  spec.stages = {StageSpec{1, 6, {}}, StageSpec{1, 12, {}}};
  spec.input_channels = 3;
  spec.input_size = 8;
  spec.num_classes = 4;
  for (StageSpec& s : spec.stages) {
    s.attention.kind = AttentionKind::stac;
    s.attention.window = Scale::of(2);
  }
  Model model = build_model(spec, 9);
  // perturb running stats so buffers are exercised too
  Rng rng(10);
  Tensor x = crstest::random_tensor<float>(rng, {4, 3, 8, 8});
  model.set_training(true);
  (void)model.forward(x);

  const auto path = (test_dir() / "model.ckpt").string();
  checkpoint_save(model, path);

  Model fresh = build_model(spec, 1234);
  checkpoint_load(fresh, path);
  model.set_training(false);
  fresh.set_training(false);
  Tensor probe = crstest::random_tensor<float>(rng, {2, 3, 8, 8});
  Tensor a = model.forward(probe);
  Tensor b = fresh.forward(probe);
  for (long i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
}

TEST_CASE("checkpoint: mismatched specs are rejected with offender lists") {
  ModelSpec spec;
  spec.stages = {StageSpec{1, 6, {}}};
  spec.input_channels = 3;
  spec.input_size = 8;
  spec.num_classes = 4;
  Model model = build_model(spec, 3);
  const auto path = (test_dir() / "mismatch.ckpt").string();
  checkpoint_save(model, path);

  ModelSpec wider = spec;
  wider.stages[0].channels = 8;
  Model other = build_model(wider, 3);
  try {
    checkpoint_load(other, path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind == IoError::Kind::shape_mismatch);
    CHECK(std::string(e.what()).find("neck.conv.weight") != std::string::npos);
  }

  ModelSpec more_stages = spec;
  more_stages.stages.push_back(StageSpec{1, 6, {}});
  Model deeper = build_model(more_stages, 3);
  try {
    checkpoint_load(deeper, path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind == IoError::Kind::key_mismatch);
    CHECK(std::string(e.what()).find("stage2.block1") != std::string::npos);
  }
}

TEST_CASE("checkpoints of fresh and perturbed models differ") {
  ModelSpec spec;
  spec.stages = {StageSpec{1, 4, {}}};
  spec.input_channels = 1;
  spec.input_size = 8;
  spec.num_classes = 2;
  Model model = build_model(spec, 5);
  const auto p1 = (test_dir() / "fresh.ckpt").string();
  checkpoint_save(model, p1);
  model.parameters().front()->value.data()[0] += 1.0f;
  const auto p2 = (test_dir() / "stepped.ckpt").string();
  checkpoint_save(model, p2);
  CHECK(read_bytes(p1) != read_bytes(p2));
}

TEST_CASE("checkpoint truncation fuzz never crashes") {
  ModelSpec spec;
  spec.stages = {StageSpec{1, 2, {}}};
  spec.input_channels = 1;
  spec.input_size = 8;
  spec.num_classes = 2;
  Model model = build_model(spec, 6);
  const auto path = (test_dir() / "fuzz.ckpt").string();
  checkpoint_save(model, path);
  const std::string bytes = read_bytes(path);
  const auto trunc = (test_dir() / "fuzz_trunc.ckpt").string();
  // step 7 keeps the loop fast while still covering every structural region
  for (size_t len = 0; len < bytes.size(); len += 7) {
    write_bytes(trunc, bytes.substr(0, len));
    Model target = build_model(spec, 7);
    CHECK_THROWS_AS(checkpoint_load(target, trunc), IoError);
  }
}
