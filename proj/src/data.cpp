#include "msdn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <json.hpp>

#include "msdn/classic_fusion.hpp"
#include "msdn/ops.hpp"

namespace msdn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kTensorMagic[4] = {'M', 'S', 'D', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s, const fs::path& root) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw FormatError(root.string() + "/manifest.json: unknown split '" + s + "'");
}

json params_to_json(const SceneParams& p) {
  return {{"size", p.size},           {"scale", p.scale},         {"bands", p.bands},
          {"texture", p.texture},     {"hp_window", p.hp_window}, {"pan_weights", p.pan_weights}};
}

SceneParams params_from_json(const json& j) {
  SceneParams p;
  p.size = j.at("size").get<Index>();
  p.scale = j.at("scale").get<int>();
  p.bands = j.at("bands").get<Index>();
  p.texture = j.at("texture").get<double>();
  p.hp_window = j.at("hp_window").get<int>();
  p.pan_weights = j.at("pan_weights").get<std::vector<double>>();
  return p;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

template <typename S>
Tensor<S> wald_downsample(const Tensor<S>& img, int factor) {
  if (factor < 1) throw ParameterError("wald_downsample: factor must be >= 1");
  if (img.rank() < 2) throw ShapeError("wald_downsample: needs at least 2 axes");
  const Index h = img.dim(-2), w = img.dim(-1);
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("wald_downsample: " + img.shape().str() + " not divisible by " +
                     std::to_string(factor));
  }
  const Index planes = img.shape().planes();
  const Index oh = h / factor, ow = w / factor;
  const S inv = S(1) / static_cast<S>(factor * factor);
  Buffer<S> out(planes * oh * ow);
  const S* x = img.raw();
  for (Index p = 0; p < planes; ++p)
    for (Index r = 0; r < oh; ++r)
      for (Index c = 0; c < ow; ++c) {
        const S* block = x + (p * h + r * factor) * w + c * factor;
        const S ref = block[0];
        S acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += block[dy * w + dx] - ref;
        out[(p * oh + r) * ow + c] = ref + acc * inv;
      }
  return Tensor<S>::from_buffer(img.shape().with(-2, oh).with(-1, ow), std::move(out));
}

template Tensor<float> wald_downsample(const Tensor<float>&, int);
template Tensor<double> wald_downsample(const Tensor<double>&, int);

void SceneParams::validate() const {
  if (scale < 1) throw ConfigError("scale must be >= 1");
  if (size < scale || size % scale != 0) {
    throw ConfigError("scene size " + std::to_string(size) + " is not divisible by scale " +
                      std::to_string(scale));
  }
  if (bands < 1) throw ConfigError("bands must be >= 1");
  if (static_cast<Index>(pan_weights.size()) != bands) {
    throw ConfigError("pan weights need one entry per band");
  }
  if (hp_window < 1 || hp_window % 2 == 0) throw ConfigError("hp window must be odd");
  if (texture < 0.0) throw ConfigError("texture amplitude must be >= 0");
}

SceneSample synth_scene(std::uint64_t seed, const SceneParams& params) {
  params.validate();
  std::mt19937_64 rng(mix_seed(seed));
  const auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const Index n = params.size, bands = params.bands, plane = n * n;
  const double span = static_cast<double>(std::max<Index>(n - 1, 1));

  Eigen::ArrayXd scene(bands * plane);
  for (Index b = 0; b < bands; ++b) {
    const double base = uniform(0.15, 0.55);
    const double gx = uniform(-0.2, 0.2), gy = uniform(-0.2, 0.2);
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x)
        scene[b * plane + y * n + x] = base + gx * (x / span - 0.5) + gy * (y / span - 0.5);
  }

  const int shapes = 3 + static_cast<int>(rng() % 4);
  std::vector<double> reflectance(static_cast<std::size_t>(bands));
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = uniform(0.0, 1.0) < 0.5;
    const double cx = uniform(0.0, double(n)), cy = uniform(0.0, double(n));
    const double rx = uniform(n / 10.0, n / 3.0), ry = uniform(n / 10.0, n / 3.0);
    for (double& r : reflectance) r = uniform(0.0, 1.0);
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const bool inside =
            ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (Index b = 0; b < bands; ++b) scene[b * plane + y * n + x] = reflectance[b];
      }
  }

  SceneSample sample;
  sample.gt = Tensor<float>::from_buffer(Shape{bands, n, n},
                                         scene.cwiseMax(0.0).cwiseMin(1.0).cast<float>());

  Buffer<float> pan = Buffer<float>::Zero(plane);
  for (Index b = 0; b < bands; ++b)
    pan += static_cast<float>(params.pan_weights[b]) * sample.gt.data().segment(b * plane, plane);
  const auto kappa = static_cast<float>(params.texture);
  for (Index i = 0; i < plane; ++i) {
    const auto texture = static_cast<float>(uniform(-0.5, 0.5));
    pan[i] = std::clamp(pan[i] + kappa * texture, 0.0f, 1.0f);
  }
  sample.pan = Tensor<float>::from_buffer(Shape{1, n, n}, std::move(pan));
  sample.ms = wald_downsample(sample.gt, params.scale);
  sample.hp = hp_details(sample.pan, params.hp_window);
  return sample;
}

SceneSample augment(const SceneSample& sample, Flip flip_mode) {
  if (flip_mode == Flip::kNone) return sample;
  NoGradGuard no_grad;
  const bool horizontal = flip_mode == Flip::kHorizontal;
  SceneSample out;
  out.id = sample.id;
  out.ms = flip(sample.ms, horizontal);
  out.gt = flip(sample.gt, horizontal);
  if (sample.pan.valid()) out.pan = flip(sample.pan, horizontal);
  if (sample.hp.valid()) out.hp = flip(sample.hp, horizontal);
  return out;
}

// ---- tensor files ------------------------------------------------------------

std::string encode_tensor(const Tensor<float>& t) {
  std::string out(kTensorMagic, 4);
  out.push_back(static_cast<char>(kTensorFormatVersion));
  out.push_back(static_cast<char>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) {
    if (t.dim(i) < 1 || t.dim(i) > Index(UINT32_MAX)) {
      throw FormatError("cannot encode tensor of shape " + t.shape().str());
    }
    put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
  }
  out.reserve(out.size() + 4 * static_cast<std::size_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(t[i]));
  return out;
}

Tensor<float> decode_tensor(std::string_view bytes, std::size_t& offset, const std::string& source) {
  const auto fail = [&](const std::string& what) -> FormatError {
    return FormatError(source + ": " + what);
  };
  if (bytes.size() < offset + 6) throw fail("truncated tensor header");
  if (bytes.substr(offset, 4) != std::string_view(kTensorMagic, 4)) throw fail("bad magic, not an MSDT tensor");
  const auto version = static_cast<std::uint8_t>(bytes[offset + 4]);
  if (version != kTensorFormatVersion) throw fail("unsupported tensor version " + std::to_string(version));
  const int ndim = static_cast<unsigned char>(bytes[offset + 5]);
  if (ndim < 1 || ndim > Shape::kMaxRank) throw fail("invalid rank " + std::to_string(ndim));
  std::size_t at = offset + 6;
  if (bytes.size() < at + 4 * std::size_t(ndim)) throw fail("truncated tensor extents");
  std::vector<Index> extents;
  std::uint64_t count = 1;
  for (int i = 0; i < ndim; ++i, at += 4) {
    const std::uint32_t e = get_u32(bytes, at);
    if (e == 0) throw fail("zero tensor extent");
    count *= e;
    if (count > (std::uint64_t(1) << 40)) throw fail("tensor dimensions overflow");
    extents.push_back(static_cast<Index>(e));
  }
  if ((bytes.size() - at) / 4 < count) throw fail("truncated tensor data");
  Buffer<float> data(static_cast<Index>(count));
  for (std::uint64_t i = 0; i < count; ++i, at += 4)
    data[static_cast<Index>(i)] = std::bit_cast<float>(get_u32(bytes, at));
  offset = at;
  return Tensor<float>::from_buffer(Shape(std::span<const Index>(extents)), std::move(data));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void save_tensor(const fs::path& path, const Tensor<float>& t) { write_file(path, encode_tensor(t)); }

Tensor<float> load_tensor(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  Tensor<float> t = decode_tensor(bytes, offset, path.string());
  if (offset != bytes.size()) throw FormatError(path.string() + ": trailing bytes after tensor");
  return t;
}

void export_ppm(const fs::path& path, const Tensor<double>& img) {
  Index channels = 1, h = 0, w = 0;
  if (img.rank() == 2) {
    h = img.dim(0);
    w = img.dim(1);
  } else if (img.rank() == 3) {
    channels = img.dim(0);
    h = img.dim(1);
    w = img.dim(2);
  } else {
    throw ShapeError("export_ppm: expected (C, H, W) or (H, W), got " + img.shape().str());
  }
  if (channels != 1 && channels != 3) {
    throw ShapeError("export_ppm: unsupported channel count " + std::to_string(channels));
  }
  const double lo = img.data().minCoeff(), hi = img.data().maxCoeff();
  std::string out = (channels == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " +
                    std::to_string(h) + "\n255\n";
  const Index plane = h * w;
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < channels; ++c) {
      const double v = hi > lo ? (img[c * plane + i] - lo) / (hi - lo) * 255.0 : 0.0;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::floor(v + 0.5), 0.0, 255.0))));
    }
  write_file(path, out);
}

// ---- datasets ------------------------------------------------------------------

Split split_of(std::uint64_t seed, std::string_view id) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (char c : id) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001B3ull;
  return mix_seed(seed ^ h) % 10 == 0 ? Split::kTest : Split::kTrain;
}

std::vector<std::string> DatasetManifest::ids_in(Split split) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (splits[i] == split) out.push_back(ids[i]);
  return out;
}

std::vector<SceneSample> generate_samples(Index count, const SceneParams& params,
                                          std::uint64_t seed) {
  std::vector<SceneSample> samples;
  for (Index i = 0; i < count; ++i) {
    SceneSample s = synth_scene(mix_seed(seed) + static_cast<std::uint64_t>(i), params);
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04lld", static_cast<long long>(i));
    s.id = id;
    samples.push_back(std::move(s));
  }
  return samples;
}

DatasetManifest generate_dataset(const fs::path& root, Index count, const SceneParams& params,
                                 std::uint64_t seed) {
  if (count < 1) throw ConfigError("sample count must be >= 1");
  DatasetManifest manifest;
  manifest.root = root;
  manifest.seed = seed;
  manifest.params = params;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  for (const SceneSample& s : generate_samples(count, params, seed)) {
    write_sample(root, s);
    manifest.ids.push_back(s.id);
    manifest.splits.push_back(split_of(seed, s.id));
  }
  write_manifest(manifest);
  return manifest;
}

void write_sample(const fs::path& root, const SceneSample& sample) {
  const fs::path dir = root / sample.id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_tensor(dir / "ms.msdt", sample.ms);
  save_tensor(dir / "gt.msdt", sample.gt);
  save_tensor(dir / "pan.msdt", sample.pan);
  save_tensor(dir / "hp.msdt", sample.hp);
}

SceneSample read_sample(const fs::path& root, const std::string& id) {
  const fs::path dir = root / id;
  return {id, load_tensor(dir / "ms.msdt"), load_tensor(dir / "gt.msdt"),
          load_tensor(dir / "pan.msdt"), load_tensor(dir / "hp.msdt")};
}

void write_manifest(const DatasetManifest& manifest) {
  json samples = json::array();
  for (std::size_t i = 0; i < manifest.ids.size(); ++i)
    samples.push_back({{"id", manifest.ids[i]}, {"split", split_name(manifest.splits[i])}});
  const json j = {{"format", "msdn-dataset"}, {"version", 1},
                  {"seed", manifest.seed},    {"params", params_to_json(manifest.params)},
                  {"samples", samples}};
  write_file(manifest.root / "manifest.json", j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  json j;
  try {
    j = json::parse(read_file(path));
    DatasetManifest m;
    m.root = root;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.params = params_from_json(j.at("params"));
    for (const json& s : j.at("samples")) {
      m.ids.push_back(s.at("id").get<std::string>());
      m.splits.push_back(parse_split(s.at("split").get<std::string>(), root));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<SceneSample> load_split(const DatasetManifest& manifest, Split split) {
  std::vector<SceneSample> out;
  for (const std::string& id : manifest.ids_in(split)) out.push_back(read_sample(manifest.root, id));
  return out;
}

}  // namespace msdn
