#include "crs/data_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "serialization code assumes a little-endian host");

namespace crs {

namespace {

std::string with_thousands(long long v) {
  std::string raw = std::to_string(v);
  std::string out;
  int count = 0;
  for (auto it = raw.rbegin(); it != raw.rend(); ++it) {
    if (count && count % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  return std::string(out.rbegin(), out.rend());
}

/// Bounds-checked cursor over a fully loaded file.
class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  static Reader open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw IoError(IoError::Kind::open_failed, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return Reader(ss.str(), path);
  }

  void read(void* dst, size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      throw IoError(IoError::Kind::truncated,
                    strf("%s: truncated while reading %s at offset %zu", path_.c_str(), what,
                         pos_));
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  uint8_t u8(const char* what) {
    uint8_t v;
    read(&v, 1, what);
    return v;
  }
  uint16_t u16(const char* what) {
    uint16_t v;
    read(&v, 2, what);
    return v;
  }
  uint32_t u32(const char* what) {
    uint32_t v;
    read(&v, 4, what);
    return v;
  }
  std::string str(size_t n, const char* what) {
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }
  size_t remaining() const { return bytes_.size() - pos_; }
  size_t size() const { return bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError(IoError::Kind::write_failed, "cannot open " + path);
  }
  void write(const void* src, size_t n) {
    out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }
  void u8(uint8_t v) { write(&v, 1); }
  void u16(uint16_t v) { write(&v, 2); }
  void u32(uint32_t v) { write(&v, 4); }
  void str(const std::string& s) { write(s.data(), s.size()); }
  void close() {
    out_.close();
    if (!out_) throw IoError(IoError::Kind::write_failed, "write failed for " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

constexpr int kCifarRecordBytes = 3073;
constexpr int kCifarPixelBytes = 3072;

}  // namespace

Cifar10RawBatch read_cifar10_batch(const std::string& path, int expected_records) {
  Reader r = Reader::open(path);
  const long long expected_bytes = static_cast<long long>(expected_records) * kCifarRecordBytes;
  if (static_cast<long long>(r.size()) != expected_bytes)
    throw IoError(IoError::Kind::bad_size,
                  strf("%s: expected %s bytes (%d records of %d bytes), found %s", path.c_str(),
                       with_thousands(expected_bytes).c_str(), expected_records,
                       kCifarRecordBytes,
                       with_thousands(static_cast<long long>(r.size())).c_str()));
  Cifar10RawBatch batch;
  batch.labels.resize(static_cast<size_t>(expected_records));
  batch.pixels.resize(static_cast<size_t>(expected_records) * kCifarPixelBytes);
  for (int i = 0; i < expected_records; ++i) {
    batch.labels[static_cast<size_t>(i)] = r.u8("label");
    if (batch.labels[static_cast<size_t>(i)] > 9)
      throw IoError(IoError::Kind::bad_format,
                    strf("%s: record %d has label byte %d (valid range 0-9)", path.c_str(), i,
                         batch.labels[static_cast<size_t>(i)]));
    r.read(batch.pixels.data() + static_cast<size_t>(i) * kCifarPixelBytes, kCifarPixelBytes,
           "pixels");
  }
  return batch;
}

void write_cifar10_batch(const Cifar10RawBatch& batch, const std::string& path) {
  Writer w(path);
  for (size_t i = 0; i < batch.labels.size(); ++i) {
    w.u8(batch.labels[i]);
    w.write(batch.pixels.data() + i * kCifarPixelBytes, kCifarPixelBytes);
  }
  w.close();
}

Cifar10 load_cifar10_binary(const std::string& dir) {
  namespace fs = std::filesystem;
  auto load_split = [&](const std::vector<std::string>& files, const std::string& split) {
    std::vector<uint8_t> labels, pixels;
    for (const std::string& f : files) {
      Cifar10RawBatch b = read_cifar10_batch((fs::path(dir) / f).string());
      labels.insert(labels.end(), b.labels.begin(), b.labels.end());
      pixels.insert(pixels.end(), b.pixels.begin(), b.pixels.end());
    }
    const int n = static_cast<int>(labels.size());
    LabeledDataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.assign(labels.begin(), labels.end());
    ds.class_count = 10;
    ds.split = split;
    float* out = ds.images.data();
    for (size_t i = 0; i < pixels.size(); ++i)
      out[i] = static_cast<float>(pixels[i]) / 255.0f;  // channel-planar matches NCHW
    return ds;
  };

  Cifar10 data;
  data.train = load_split({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                           "data_batch_4.bin", "data_batch_5.bin"},
                          "train");
  data.test = load_split({"test_batch.bin"}, "test");

  // Train-split statistics, applied identically to both splits.
  const size_t plane = 32 * 32;
  const size_t per_image = 3 * plane;
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    const float* x = data.train.images.data();
    const size_t n_img = static_cast<size_t>(data.train.size());
    for (size_t i = 0; i < n_img; ++i) {
      const float* xc = x + i * per_image + static_cast<size_t>(c) * plane;
      for (size_t p = 0; p < plane; ++p) {
        s += xc[p];
        s2 += static_cast<double>(xc[p]) * xc[p];
      }
    }
    const double count = static_cast<double>(n_img * plane);
    data.mean[static_cast<size_t>(c)] = s / count;
    const double var = s2 / count - data.mean[static_cast<size_t>(c)] * data.mean[static_cast<size_t>(c)];
    data.stddev[static_cast<size_t>(c)] = std::sqrt(std::max(var, 1e-12));
  }
  for (LabeledDataset* ds : {&data.train, &data.test}) {
    float* x = ds->images.data();
    for (size_t i = 0; i < static_cast<size_t>(ds->size()); ++i)
      for (int c = 0; c < 3; ++c) {
        float* xc = x + i * per_image + static_cast<size_t>(c) * plane;
        const float mu = static_cast<float>(data.mean[static_cast<size_t>(c)]);
        const float inv = static_cast<float>(1.0 / data.stddev[static_cast<size_t>(c)]);
        for (size_t p = 0; p < plane; ++p) xc[p] = (xc[p] - mu) * inv;
      }
  }
  return data;
}

LabeledDataset synth_blobs(int classes, int n_per_class, int size, int channels, uint64_t seed,
                           double separation) {
  if (classes < 2) throw ValueError("synth_blobs: need at least 2 classes");
  if (n_per_class < 1 || size < 1 || channels < 1)
    throw ValueError("synth_blobs: bad dimensions");
  Rng rng(seed);
  const long dim = static_cast<long>(channels) * size * size;

  // Fixed per-class templates, scaled so pairwise template distance is
  // approximately `separation` (independent random directions).
  std::vector<std::vector<double>> templates(static_cast<size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    std::vector<double>& t = templates[static_cast<size_t>(k)];
    t.resize(static_cast<size_t>(dim));
    double norm2 = 0.0;
    for (long i = 0; i < dim; ++i) {
      t[static_cast<size_t>(i)] = rng.normal();
      norm2 += t[static_cast<size_t>(i)] * t[static_cast<size_t>(i)];
    }
    const double target = separation / std::sqrt(2.0);
    const double scale = norm2 > 0.0 ? target / std::sqrt(norm2) : 0.0;
    for (long i = 0; i < dim; ++i) t[static_cast<size_t>(i)] *= scale;
  }

  const int n = classes * n_per_class;
  LabeledDataset ds;
  ds.images = Tensor({n, channels, size, size});
  ds.labels.resize(static_cast<size_t>(n));
  ds.class_count = classes;
  ds.split = "synth";
  float* out = ds.images.data();
  for (int k = 0; k < classes; ++k) {
    const std::vector<double>& t = templates[static_cast<size_t>(k)];
    for (int j = 0; j < n_per_class; ++j) {
      const int idx = k * n_per_class + j;
      ds.labels[static_cast<size_t>(idx)] = k;
      float* img = out + static_cast<size_t>(idx) * dim;
      for (long i = 0; i < dim; ++i)
        img[i] = static_cast<float>(t[static_cast<size_t>(i)] + rng.normal());
    }
  }
  return ds;
}

LabeledDataset stratified_subset(const LabeledDataset& ds, int max_samples) {
  if (max_samples <= 0 || max_samples >= ds.size()) return ds;
  std::vector<std::vector<int>> by_class(static_cast<size_t>(std::max(ds.class_count, 1)));
  for (int i = 0; i < ds.size(); ++i)
    by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);

  // Round-robin over classes keeps the subset balanced and deterministic.
  std::vector<int> keep;
  keep.reserve(static_cast<size_t>(max_samples));
  size_t cursor = 0;
  while (static_cast<int>(keep.size()) < max_samples) {
    bool advanced = false;
    for (std::vector<int>& cls : by_class) {
      if (cursor < cls.size() && static_cast<int>(keep.size()) < max_samples) {
        keep.push_back(cls[cursor]);
        advanced = true;
      }
    }
    if (!advanced) break;
    ++cursor;
  }
  std::sort(keep.begin(), keep.end());

  LabeledDataset out;
  const Shape& s = ds.images.shape();
  const long row = static_cast<long>(s[1]) * s[2] * s[3];
  out.images = Tensor({static_cast<int>(keep.size()), s[1], s[2], s[3]});
  out.labels.resize(keep.size());
  out.class_count = ds.class_count;
  out.split = ds.split;
  for (size_t i = 0; i < keep.size(); ++i) {
    std::memcpy(out.images.data() + static_cast<long>(i) * row,
                ds.images.data() + static_cast<long>(keep[i]) * row,
                static_cast<size_t>(row) * sizeof(float));
    out.labels[i] = ds.labels[static_cast<size_t>(keep[i])];
  }
  return out;
}

// ---- CRSF feature dump ---------------------------------------------------

namespace {
constexpr char kDumpMagic[4] = {'C', 'R', 'S', 'F'};
constexpr uint16_t kDumpVersion = 1;
}  // namespace

void write_feature_dump(const FeatureSet& fs, const std::string& path) {
  if (fs.taps.size() > 0xFFFF)
    throw IoError(IoError::Kind::bad_format, "feature dump supports at most 65535 taps");
  Writer w(path);
  w.write(kDumpMagic, 4);
  w.u16(kDumpVersion);
  w.u16(static_cast<uint16_t>(fs.taps.size()));
  for (const FeatureTap& tap : fs.taps) {
    if (tap.name.size() > 0xFFFF)
      throw IoError(IoError::Kind::bad_format, "tap name too long: " + tap.name);
    w.u16(static_cast<uint16_t>(tap.name.size()));
    w.str(tap.name);
    w.u8(static_cast<uint8_t>(tap.features.rank()));
    for (int d = 0; d < tap.features.rank(); ++d)
      w.u32(static_cast<uint32_t>(tap.features.dim(d)));
    w.write(tap.features.data(), static_cast<size_t>(tap.features.numel()) * sizeof(float));
  }
  w.u32(static_cast<uint32_t>(fs.labels.size()));
  for (int label : fs.labels) w.u32(static_cast<uint32_t>(label));
  w.close();
}

FeatureSet read_feature_dump(const std::string& path) {
  Reader r = Reader::open(path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kDumpMagic, 4) != 0)
    throw IoError(IoError::Kind::bad_magic, path + ": bad magic (not a CRSF feature dump)");
  const uint16_t version = r.u16("version");
  if (version != kDumpVersion)
    throw IoError(IoError::Kind::bad_version,
                  strf("%s: unsupported CRSF version %u", path.c_str(), version));
  const uint16_t tap_count = r.u16("tap count");

  FeatureSet fs;
  int batch = -1;
  for (int t = 0; t < tap_count; ++t) {
    FeatureTap tap;
    tap.layer_index = t;  // ordinal; the format does not store indices
    const uint16_t name_len = r.u16("name length");
    tap.name = r.str(name_len, "name");
    const uint8_t rank = r.u8("rank");
    if (rank != 2 && rank != 4)
      throw IoError(IoError::Kind::bad_format,
                    strf("%s: tap '%s' has rank %u (only 2 and 4 supported)", path.c_str(),
                         tap.name.c_str(), rank));
    Shape shape(rank);
    long long numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32("dim");
      if (dim == 0 || dim > 0x7FFFFFFF)
        throw IoError(IoError::Kind::dim_mismatch,
                      strf("%s: tap '%s' dim %u is invalid", path.c_str(), tap.name.c_str(),
                           dim));
      shape[d] = static_cast<int>(dim);
      numel *= dim;
      if (numel > (1LL << 40))
        throw IoError(IoError::Kind::dim_mismatch,
                      strf("%s: tap '%s' declares an implausible element count", path.c_str(),
                           tap.name.c_str()));
    }
    if (static_cast<size_t>(numel) * sizeof(float) > r.remaining())
      throw IoError(IoError::Kind::dim_mismatch,
                    strf("%s: tap '%s' declares %lld values but only %zu bytes remain",
                         path.c_str(), tap.name.c_str(), numel, r.remaining()));
    if (batch < 0)
      batch = shape[0];
    else if (shape[0] != batch)
      throw IoError(IoError::Kind::dim_mismatch,
                    strf("%s: tap '%s' batch %d differs from %d", path.c_str(),
                         tap.name.c_str(), shape[0], batch));
    Tensor f(shape);
    r.read(f.data(), static_cast<size_t>(numel) * sizeof(float), "tap values");
    tap.features = std::move(f);
    fs.taps.push_back(std::move(tap));
  }
  const uint32_t n_labels = r.u32("label count");
  if (batch >= 0 && static_cast<int>(n_labels) != batch)
    throw IoError(IoError::Kind::dim_mismatch,
                  strf("%s: %u labels for batch of %d", path.c_str(), n_labels, batch));
  fs.labels.resize(n_labels);
  for (uint32_t i = 0; i < n_labels; ++i)
    fs.labels[i] = static_cast<int>(r.u32("label"));
  return fs;
}

// ---- CS curve CSV ----------------------------------------------------------

void write_cs_csv(const CSCurveSet& curves, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoError::Kind::write_failed, "cannot open " + path);
  out << "layer_index,layer_name,scale,cs\n";
  for (size_t i = 0; i < curves.layer_count(); ++i)
    for (size_t s = 0; s < curves.scale_count(); ++s)
      out << curves.layer_indices[i] << ',' << curves.layer_names[i] << ','
          << curves.scales[s].str() << ',' << strf("%.6f", curves.values[i][s]) << '\n';
  out.close();
  if (!out) throw IoError(IoError::Kind::write_failed, "write failed for " + path);
}

CSCurveSet read_cs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::open_failed, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "layer_index,layer_name,scale,cs")
    throw IoError(IoError::Kind::bad_format, path + ": missing cs csv header");

  CSCurveSet curves;
  std::map<int, std::string> names;
  std::vector<std::tuple<int, Scale, double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string idx_s, name, scale_s, cs_s;
    if (!std::getline(ss, idx_s, ',') || !std::getline(ss, name, ',') ||
        !std::getline(ss, scale_s, ',') || !std::getline(ss, cs_s))
      throw IoError(IoError::Kind::bad_format, strf("%s:%d: bad row", path.c_str(), line_no));
    int idx = 0;
    double cs = 0.0;
    std::optional<Scale> scale = Scale::parse(scale_s);
    try {
      idx = std::stoi(idx_s);
      cs = std::stod(cs_s);
    } catch (const std::exception&) {
      throw IoError(IoError::Kind::bad_format, strf("%s:%d: bad number", path.c_str(), line_no));
    }
    if (!scale)
      throw IoError(IoError::Kind::bad_format,
                    strf("%s:%d: bad scale '%s'", path.c_str(), line_no, scale_s.c_str()));
    names[idx] = name;
    rows.emplace_back(idx, *scale, cs);
    bool seen = false;
    for (const Scale& s : curves.scales) seen = seen || s == *scale;
    if (!seen) curves.scales.push_back(*scale);
  }
  for (const auto& [idx, name] : names) {
    curves.layer_indices.push_back(idx);
    curves.layer_names.push_back(name);
  }
  curves.values.assign(curves.layer_count(),
                       std::vector<double>(curves.scale_count(), 0.0));
  for (const auto& [idx, scale, cs] : rows) {
    size_t li = 0;
    while (curves.layer_indices[li] != idx) ++li;
    curves.values[li][static_cast<size_t>(curves.scale_pos(scale))] = cs;
  }
  return curves;
}

// ---- Checkpoints -----------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'C', 'R', 'S', 'C'};
constexpr uint16_t kCkptVersion = 1;

std::vector<std::pair<std::string, Tensor*>> named_state(Model& model) {
  std::vector<std::pair<std::string, Tensor*>> entries;
  for (Parameter* p : model.parameters()) entries.emplace_back(p->name, &p->value);
  for (auto& [name, buf] : model.buffers()) entries.emplace_back(name, buf);
  return entries;
}
}  // namespace

void checkpoint_save(Model& model, const std::string& path) {
  auto entries = named_state(model);
  Writer w(path);
  w.write(kCkptMagic, 4);
  w.u16(kCkptVersion);
  w.u32(static_cast<uint32_t>(entries.size()));
  for (auto& [name, tensor] : entries) {
    w.u16(static_cast<uint16_t>(name.size()));
    w.str(name);
    w.u8(static_cast<uint8_t>(tensor->rank()));
    for (int d = 0; d < tensor->rank(); ++d) w.u32(static_cast<uint32_t>(tensor->dim(d)));
    w.write(tensor->data(), static_cast<size_t>(tensor->numel()) * sizeof(float));
  }
  w.close();
}

void checkpoint_load(Model& model, const std::string& path) {
  Reader r = Reader::open(path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw IoError(IoError::Kind::bad_magic, path + ": bad magic (not a CRSC checkpoint)");
  if (r.u16("version") != kCkptVersion)
    throw IoError(IoError::Kind::bad_version, path + ": unsupported checkpoint version");
  const uint32_t count = r.u32("entry count");

  std::map<std::string, std::pair<Shape, std::vector<float>>> stored;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16("name length");
    std::string name = r.str(name_len, "name");
    const uint8_t rank = r.u8("rank");
    Shape shape(rank);
    long long numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(r.u32("dim"));
      if (shape[d] <= 0)
        throw IoError(IoError::Kind::dim_mismatch,
                      strf("%s: entry '%s' has bad dim", path.c_str(), name.c_str()));
      numel *= shape[d];
      if (numel > (1LL << 40))
        throw IoError(IoError::Kind::dim_mismatch,
                      strf("%s: entry '%s' declares an implausible element count", path.c_str(),
                           name.c_str()));
    }
    if (static_cast<size_t>(numel) * sizeof(float) > r.remaining())
      throw IoError(IoError::Kind::truncated,
                    strf("%s: entry '%s' truncated", path.c_str(), name.c_str()));
    std::vector<float> data(static_cast<size_t>(numel));
    r.read(data.data(), data.size() * sizeof(float), "entry values");
    stored[name] = {std::move(shape), std::move(data)};
  }

  auto entries = named_state(model);
  std::string missing, extra, mismatched;
  for (auto& [name, tensor] : entries) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      missing += (missing.empty() ? "" : ", ") + name;
    } else if (it->second.first != tensor->shape()) {
      mismatched += (mismatched.empty() ? "" : ", ") + name +
                    strf(" (checkpoint %s vs model %s)",
                         shape_str(it->second.first).c_str(),
                         shape_str(tensor->shape()).c_str());
    }
  }
  {
    std::map<std::string, bool> wanted;
    for (auto& [name, tensor] : entries) wanted[name] = true;
    for (auto& [name, payload] : stored)
      if (!wanted.count(name)) extra += (extra.empty() ? "" : ", ") + name;
  }
  if (!missing.empty() || !extra.empty() || !mismatched.empty()) {
    std::string msg = path + ": checkpoint does not match model spec.";
    if (!missing.empty()) msg += " missing: [" + missing + "]";
    if (!extra.empty()) msg += " extra: [" + extra + "]";
    if (!mismatched.empty()) msg += " shape mismatches: [" + mismatched + "]";
    throw IoError(!mismatched.empty() ? IoError::Kind::shape_mismatch
                                      : IoError::Kind::key_mismatch,
                  msg);
  }

  for (auto& [name, tensor] : entries) {
    const std::vector<float>& src = stored[name].second;
    std::copy(src.begin(), src.end(), tensor->data());
  }
}

}  // namespace crs
