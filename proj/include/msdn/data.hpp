#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "msdn/tensor.hpp"

namespace msdn {

// Block-mean low-pass + decimation by an integer factor over the two
// innermost axes.
template <typename S>
Tensor<S> wald_downsample(const Tensor<S>& img, int factor);

struct SceneParams {
  Index size = 64;  // GT / PAN side
  int scale = 4;    // GT side / MS side
  Index bands = 4;
  double texture = 0.1;  // amplitude of PAN-only high-frequency texture
  int hp_window = 5;
  std::vector<double> pan_weights{0.25, 0.25, 0.25, 0.25};

  static SceneParams desk() {
    SceneParams p;
    p.size = 32;
    return p;
  }
  void validate() const;
};

// One reduced-resolution training/evaluation record; every value in [0, 1]
// except hp, which is PAN minus its box-filtered version.
struct SceneSample {
  std::string id;
  Tensor<float> ms;   // (bands, size/scale, size/scale)
  Tensor<float> gt;   // (bands, size, size)
  Tensor<float> pan;  // (1, size, size)
  Tensor<float> hp;   // (1, size, size)
};

// Seeded scene of rectangles and ellipses over smooth per-band gradients.
SceneSample synth_scene(std::uint64_t seed, const SceneParams& params = {});

enum class Flip { kNone, kHorizontal, kVertical };

SceneSample augment(const SceneSample& sample, Flip flip);

// ---- tensor files ------------------------------------------------------------
//
// "MSDT" | version u8 (=1) | ndim u8 (1..4) | ndim x u32 LE extents |
// row-major f32 LE values.

inline constexpr std::uint8_t kTensorFormatVersion = 1;

std::string encode_tensor(const Tensor<float>& t);

// Decodes one tensor starting at offset and advances it past the blob.
Tensor<float> decode_tensor(std::string_view bytes, std::size_t& offset,
                            const std::string& source = "<memory>");

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Binary P5 (one channel) or P6 (three channels) with per-image min-max
// scaling to 0..255, rounding half up; a flat image maps to 0.
void export_ppm(const std::filesystem::path& path, const Tensor<double>& img);

// ---- datasets ------------------------------------------------------------------

enum class Split { kTrain, kTest };

// 90/10 assignment as a pure function of (seed, id).
Split split_of(std::uint64_t seed, std::string_view id);

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> ids;
  std::vector<Split> splits;
  std::uint64_t seed = 0;
  SceneParams params;

  std::vector<std::string> ids_in(Split split) const;
};

// Writes <root>/<id>/{ms,gt,pan,hp}.msdt and <root>/manifest.json.
DatasetManifest generate_dataset(const std::filesystem::path& root, Index count,
                                 const SceneParams& params, std::uint64_t seed);

std::vector<SceneSample> generate_samples(Index count, const SceneParams& params,
                                          std::uint64_t seed);

void write_sample(const std::filesystem::path& root, const SceneSample& sample);
SceneSample read_sample(const std::filesystem::path& root, const std::string& id);

void write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& root);

std::vector<SceneSample> load_split(const DatasetManifest& manifest, Split split);

// SplitMix64 finalizer; the building block of every counter-based seed here.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace msdn
