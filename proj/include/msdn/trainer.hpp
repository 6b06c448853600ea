#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "msdn/data.hpp"
#include "msdn/injection_net.hpp"
#include "msdn/losses.hpp"

namespace msdn {

struct TrainConfig {
  int epochs = 200;
  Index batch = 16;
  double lr = 4e-4;
  double decay = 0.5;
  int decay_every = 50;
  bool repeated_decay = true;  // false: decay once when reaching decay_every
  LossConfig loss;
  std::uint64_t seed = 0;
  ModelConfig model;
  bool augment = true;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;

  // C = 16, N = 16, NIN depth 2, batch 4; meant for 8x8 MS patches.
  static TrainConfig desk();
  void validate() const;
};

double lr_at(int epoch, const TrainConfig& config);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient; gradients are zeroed afterwards.
template <typename S>
void adam_step(ParameterStore<S>& params, AdamState& state, double lr);

struct StepReport {
  std::int64_t step = 0;
  int epoch = 0;
  double l1 = 0;
  double l_mem = 0;
  double total = 0;
};

struct EpochReport {
  int epoch = 0;
  std::int64_t step = 0;  // optimizer steps completed so far
  double lr = 0;
  double l1 = 0;  // means over the epoch's steps
  double l_mem = 0;
  double total = 0;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  static constexpr std::uint8_t kVersion = 1;

  TrainConfig config;
  int epoch = 0;
  std::int64_t step = 0;
  std::int64_t adam_step = 0;
  std::int64_t cursor = 0;  // batch position inside the current epoch
  std::vector<NamedTensor> tensors;  // parameters, then "<name>#m" / "<name>#v" moments

  const NamedTensor* find(std::string_view name) const;
};

// "MSDC" | version u8 | u32 LE length + UTF-8 JSON config | u32 entry count |
// entries of (u32 name length, name bytes, MSDT tensor blob).
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

PansharpenModel<float> model_from_checkpoint(const Checkpoint& ckpt);

struct Batch {
  Tensor<float> ms;  // (n, bands, h, w)
  Tensor<float> gt;  // (n, bands, s*h, s*w)
  Tensor<float> hp;  // (n, 1, s*h, s*w)
};

Batch stack_samples(const std::vector<SceneSample>& samples);

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<SceneSample> data);
  // Resumes model, optimizer moments and data position from a checkpoint.
  Trainer(const Checkpoint& ckpt, std::vector<SceneSample> data);

  StepReport step();
  EpochReport run_epoch();
  // Runs the remaining epochs; on_epoch is called after each one.
  Checkpoint train(const std::function<void(const EpochReport&)>& on_epoch = {});

  Checkpoint checkpoint() const;

  LossTerms<float> evaluate(const Batch& batch) const;
  double evaluate_loss() const;  // total loss over all samples, no augmentation

  const TrainConfig& config() const { return config_; }
  const PansharpenModel<float>& model() const { return model_; }
  PansharpenModel<float>& model() { return model_; }
  int epoch() const { return epoch_; }
  std::int64_t steps() const { return step_; }
  Index steps_per_epoch() const;

 private:
  Batch next_batch();

  TrainConfig config_;
  std::vector<SceneSample> data_;
  PansharpenModel<float> model_;
  AdamState adam_;
  int epoch_ = 0;
  std::int64_t step_ = 0;
  std::int64_t cursor_ = 0;
};

// Seeded per-epoch permutation of [0, count).
std::vector<Index> epoch_order(std::uint64_t seed, int epoch, Index count);

double pearson(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b);

// Mean over samples of the Pearson correlation between the generated
// spatial details P_s and the HP target.
double spatial_detail_correlation(const PansharpenModel<float>& model,
                                  const std::vector<SceneSample>& samples);

}  // namespace msdn
