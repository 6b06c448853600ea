#include "msdn/trainer.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace msdn {

using json = nlohmann::json;

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.batch = 4;
  c.model.msdn.channels = 16;
  c.model.msdn.memory_slots = 16;
  c.model.nin_depth = 2;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
  if (!(decay > 0.0) || decay > 1.0) throw ConfigError("lr decay factor must be in (0, 1]");
  if (decay_every < 1) throw ConfigError("lr decay interval must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be >= 0");
  loss.validate();
  model.validate();
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw ParameterError("lr_at: epoch must be >= 0");
  int decays = epoch / config.decay_every;
  if (!config.repeated_decay && decays > 1) decays = 1;
  return config.lr * std::pow(config.decay, decays);
}

template <typename S>
void adam_step(ParameterStore<S>& params, AdamState& state, double lr) {
  bool any = false;
  for (const Parameter<S>& p : params.all()) any = any || p.value.grad_touched();
  if (!any) throw ContractError("adam_step: no gradients were accumulated since the last step");

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  const S b1 = S(state.beta1), b2 = S(state.beta2);
  for (Parameter<S>& p : params.all()) {
    const Buffer<S>& g = p.value.grad();
    p.first_moment = b1 * p.first_moment + (S(1) - b1) * g;
    p.second_moment = b2 * p.second_moment + (S(1) - b2) * g.square();
    const Buffer<S> m_hat = p.first_moment / S(c1);
    const Buffer<S> v_hat = p.second_moment / S(c2);
    p.value.mutable_data() -= S(lr) * m_hat / (v_hat.sqrt() + S(state.epsilon));
  }
  params.zero_grad();
}

template void adam_step(ParameterStore<float>&, AdamState&, double);
template void adam_step(ParameterStore<double>&, AdamState&, double);

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'S', 'D', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

json config_to_json(const TrainConfig& c) {
  const MsdnConfig& m = c.model.msdn;
  return {{"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"decay", c.decay},
          {"decay_every", c.decay_every},
          {"repeated_decay", c.repeated_decay},
          {"lambda", c.loss.lambda},
          {"kl_epsilon", c.loss.kl_epsilon},
          {"sparsity_weight", c.loss.sparsity_weight},
          {"seed", c.seed},
          {"augment", c.augment},
          {"checkpoint_every", c.checkpoint_every},
          {"model",
           {{"bands", c.model.bands},
            {"head_blocks", c.model.head_blocks},
            {"nin_depth", c.model.nin_depth},
            {"memory_slots", m.memory_slots},
            {"scale", m.scale},
            {"channels", m.channels},
            {"spatial_kernel", m.spatial_kernel},
            {"reduction", m.reduction}}}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch = j.at("batch").get<Index>();
  c.lr = j.at("lr").get<double>();
  c.decay = j.at("decay").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.repeated_decay = j.at("repeated_decay").get<bool>();
  c.loss.lambda = j.at("lambda").get<double>();
  c.loss.kl_epsilon = j.at("kl_epsilon").get<double>();
  c.loss.sparsity_weight = j.at("sparsity_weight").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.augment = j.at("augment").get<bool>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  const json& m = j.at("model");
  c.model.bands = m.at("bands").get<Index>();
  c.model.head_blocks = m.at("head_blocks").get<Index>();
  c.model.nin_depth = m.at("nin_depth").get<int>();
  c.model.msdn.memory_slots = m.at("memory_slots").get<Index>();
  c.model.msdn.scale = m.at("scale").get<int>();
  c.model.msdn.channels = m.at("channels").get<Index>();
  c.model.msdn.spatial_kernel = m.at("spatial_kernel").get<int>();
  c.model.msdn.reduction = m.at("reduction").get<Index>();
  return c;
}

Tensor<float> buffer_tensor(const Shape& shape, const Buffer<float>& b) {
  return Tensor<float>::from_buffer(shape, b);
}

}  // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const json header = {{"format", "msdn-checkpoint"},
                       {"config", config_to_json(ckpt.config)},
                       {"epoch", ckpt.epoch},
                       {"step", ckpt.step},
                       {"adam_step", ckpt.adam_step},
                       {"rng", {{"seed", ckpt.config.seed}, {"epoch", ckpt.epoch}, {"cursor", ckpt.cursor}}}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  out.push_back(static_cast<char>(Checkpoint::kVersion));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out += encode_tensor(t.value);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  const auto fail = [&](const std::string& what) { return FormatError(source + ": " + what); };
  if (bytes.size() < 9) throw fail("truncated checkpoint header");
  if (bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) throw fail("bad magic, not an MSDC checkpoint");
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != Checkpoint::kVersion) {
    throw VersionError(source + ": checkpoint version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(Checkpoint::kVersion) + ")");
  }
  const std::uint32_t text_len = get_u32(bytes, 5);
  std::size_t at = 9;
  if (bytes.size() - at < std::size_t(text_len) + 4) throw fail("truncated checkpoint config");

  Checkpoint ckpt;
  try {
    const json header = json::parse(bytes.substr(at, text_len));
    ckpt.config = config_from_json(header.at("config"));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.adam_step = header.at("adam_step").get<std::int64_t>();
    ckpt.cursor = header.at("rng").at("cursor").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw fail(std::string("corrupt checkpoint config: ") + e.what());
  }
  at += text_len;

  const std::uint32_t count = get_u32(bytes, at);
  at += 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (bytes.size() - at < 4) throw fail("truncated checkpoint entry");
    const std::uint32_t name_len = get_u32(bytes, at);
    at += 4;
    if (bytes.size() - at < name_len) throw fail("truncated checkpoint entry name");
    NamedTensor t;
    t.name = std::string(bytes.substr(at, name_len));
    at += name_len;
    t.value = decode_tensor(bytes, at, source + " [" + t.name + "]");
    ckpt.tensors.push_back(std::move(t));
  }
  if (at != bytes.size()) throw fail("trailing bytes after checkpoint entries");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

namespace {

const NamedTensor& require(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
  const NamedTensor* t = ckpt.find(name);
  if (t == nullptr) throw FormatError("checkpoint has no tensor '" + name + "'");
  if (!(t->value.shape() == shape)) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + t->value.shape().str() +
                      ", model expects " + shape.str());
  }
  return *t;
}

void restore_parameters(const Checkpoint& ckpt, PansharpenModel<float>& model, bool moments) {
  for (Parameter<float>& p : model.parameters().all()) {
    p.value.mutable_data() = require(ckpt, p.name, p.value.shape()).value.data();
    if (!moments) continue;
    p.first_moment = require(ckpt, p.name + "#m", p.value.shape()).value.data();
    p.second_moment = require(ckpt, p.name + "#v", p.value.shape()).value.data();
  }
}

}  // namespace

PansharpenModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  PansharpenModel<float> model(ckpt.config.model, ckpt.config.seed);
  restore_parameters(ckpt, model, false);
  return model;
}

// ---- training ------------------------------------------------------------------

Batch stack_samples(const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ContractError("stack_samples: empty batch");
  const auto stack = [&](auto member) {
    const Tensor<float>& first = samples.front().*member;
    const Index per = first.numel();
    Buffer<float> b(per * static_cast<Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor<float>& t = samples[i].*member;
      if (!(t.shape() == first.shape())) {
        throw ShapeError("stack_samples: sample '" + samples[i].id + "' has shape " +
                         t.shape().str() + ", expected " + first.shape().str());
      }
      b.segment(static_cast<Index>(i) * per, per) = t.data();
    }
    return Tensor<float>::from_buffer(
        Shape{static_cast<Index>(samples.size()), first.dim(0), first.dim(1), first.dim(2)},
        std::move(b));
  };
  return {stack(&SceneSample::ms), stack(&SceneSample::gt), stack(&SceneSample::hp)};
}

std::vector<Index> epoch_order(std::uint64_t seed, int epoch, Index count) {
  std::vector<Index> order(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed ^ mix_seed(0x5eed0000ull + static_cast<std::uint64_t>(epoch))));
  for (Index i = count - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

namespace {

void check_dataset(const std::vector<SceneSample>& data, const ModelConfig& model) {
  if (data.empty()) throw ConfigError("training needs at least one sample");
  for (const SceneSample& s : data) {
    if (s.ms.rank() != 3 || s.ms.dim(0) != model.bands) {
      throw ShapeError("sample '" + s.id + "': expected " + std::to_string(model.bands) +
                       "-band MS, got " + s.ms.shape().str());
    }
    if (s.gt.dim(-1) != s.ms.dim(-1) * model.scale() || s.gt.dim(-2) != s.ms.dim(-2) * model.scale()) {
      throw ShapeError("sample '" + s.id + "': GT " + s.gt.shape().str() + " is not " +
                       std::to_string(model.scale()) + "x MS " + s.ms.shape().str());
    }
  }
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::vector<SceneSample> data)
    : config_((config.validate(), std::move(config))),
      data_(std::move(data)),
      model_(config_.model, config_.seed) {
  check_dataset(data_, config_.model);
}

Trainer::Trainer(const Checkpoint& ckpt, std::vector<SceneSample> data)
    : config_((ckpt.config.validate(), ckpt.config)),
      data_(std::move(data)),
      model_(config_.model, config_.seed) {
  check_dataset(data_, config_.model);
  restore_parameters(ckpt, model_, true);
  adam_.step = ckpt.adam_step;
  epoch_ = ckpt.epoch;
  step_ = ckpt.step;
  cursor_ = ckpt.cursor;
}

Index Trainer::steps_per_epoch() const {
  const auto n = static_cast<Index>(data_.size());
  return (n + config_.batch - 1) / config_.batch;
}

Batch Trainer::next_batch() {
  const auto n = static_cast<Index>(data_.size());
  const std::vector<Index> order = epoch_order(config_.seed, epoch_, n);
  const Index begin = cursor_ * config_.batch;
  const Index end = std::min(n, begin + config_.batch);
  std::vector<SceneSample> picked;
  for (Index i = begin; i < end; ++i) {
    const Index idx = order[static_cast<std::size_t>(i)];
    Flip mode = Flip::kNone;
    if (config_.augment) {
      const std::uint64_t counter = static_cast<std::uint64_t>(epoch_) * static_cast<std::uint64_t>(n) +
                                    static_cast<std::uint64_t>(idx);
      mode = static_cast<Flip>(mix_seed(config_.seed ^ mix_seed(0xf11bull + counter)) % 3);
    }
    picked.push_back(augment(data_[static_cast<std::size_t>(idx)], mode));
  }
  return stack_samples(picked);
}

LossTerms<float> Trainer::evaluate(const Batch& batch) const {
  const PansharpenOutput<float> out = pansharpen_detailed(batch.ms, model_);
  return total_loss(out.hrms, batch.gt, batch.hp, out.spatial_details, out.coefficients,
                    config_.loss);
}

StepReport Trainer::step() {
  const Batch batch = next_batch();
  const LossTerms<float> terms = evaluate(batch);
  StepReport report{step_, epoch_, terms.reconstruction.item(), terms.memorizing.item(),
                    terms.total.item()};
  if (!std::isfinite(report.total) || !std::isfinite(report.l1) || !std::isfinite(report.l_mem)) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch_ << ", step " << step_ << " (l1=" << report.l1
        << ", l_mem=" << report.l_mem << ", total=" << report.total << ")";
    throw NumericError(msg.str());
  }
  backward(terms.total);
  adam_step(model_.parameters(), adam_, lr_at(epoch_, config_));
  ++step_;
  if (++cursor_ == steps_per_epoch()) {
    cursor_ = 0;
    ++epoch_;
  }
  return report;
}

EpochReport Trainer::run_epoch() {
  EpochReport report;
  report.epoch = epoch_;
  report.lr = lr_at(epoch_, config_);
  const int epoch = epoch_;
  Index count = 0;
  while (epoch_ == epoch) {
    const StepReport s = step();
    report.l1 += s.l1;
    report.l_mem += s.l_mem;
    report.total += s.total;
    ++count;
  }
  report.l1 /= double(count);
  report.l_mem /= double(count);
  report.total /= double(count);
  report.step = step_;
  return report;
}

Checkpoint Trainer::train(const std::function<void(const EpochReport&)>& on_epoch) {
  while (epoch_ < config_.epochs) {
    const EpochReport report = run_epoch();
    if (on_epoch) on_epoch(report);
    if (config_.checkpoint_every > 0 && !config_.checkpoint_path.empty() &&
        epoch_ % config_.checkpoint_every == 0) {
      save_checkpoint(config_.checkpoint_path, checkpoint());
    }
  }
  return checkpoint();
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = config_;
  ckpt.epoch = epoch_;
  ckpt.step = step_;
  ckpt.adam_step = adam_.step;
  ckpt.cursor = cursor_;
  const auto& params = model_.parameters().all();
  for (const Parameter<float>& p : params) ckpt.tensors.push_back({p.name, p.value.detach()});
  for (const Parameter<float>& p : params) {
    ckpt.tensors.push_back({p.name + "#m", buffer_tensor(p.value.shape(), p.first_moment)});
    ckpt.tensors.push_back({p.name + "#v", buffer_tensor(p.value.shape(), p.second_moment)});
  }
  return ckpt;
}

double Trainer::evaluate_loss() const {
  NoGradGuard no_grad;
  double total = 0;
  for (const SceneSample& s : data_) total += evaluate(stack_samples({s})).total.item();
  return total / double(data_.size());
}

double pearson(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: need two equal-length series");
  const Eigen::ArrayXd da = a - a.mean(), db = b - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (!(denom > 0.0)) throw DegenerateInputError("pearson: zero-variance series");
  return (da * db).sum() / denom;
}

double spatial_detail_correlation(const PansharpenModel<float>& model,
                                  const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ContractError("spatial_detail_correlation: no samples");
  NoGradGuard no_grad;
  double total = 0;
  for (const SceneSample& s : samples) {
    const Batch b = stack_samples({s});
    const PansharpenOutput<float> out = pansharpen_detailed(b.ms, model);
    total += pearson(out.spatial_details.data().cast<double>(), b.hp.data().cast<double>());
  }
  return total / double(samples.size());
}

}  // namespace msdn
