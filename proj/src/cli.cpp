#include "msdn/cli.hpp"

#include <cstdlib>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "msdn/classic_fusion.hpp"
#include "msdn/gradcheck.hpp"
#include "msdn/metrics.hpp"
#include "msdn/trainer.hpp"

namespace msdn::cli {

namespace {

using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenDataArgs {
  std::string out;
  Index count = 0;
  Index size = 0;
  std::uint64_t seed = 0;
  int scale = 4;
  double texture = 0.1;
};

struct ModelArgs {
  std::string preset = "full";
  std::optional<int> epochs;
  std::optional<Index> batch;
  std::optional<double> lr;
  std::optional<double> lambda;
  std::optional<double> sparsity_weight;
  std::optional<Index> mem_slots;
  std::optional<int> scale;
  std::optional<Index> channels;
  std::optional<int> nin_depth;
  std::optional<Index> head_blocks;
  std::optional<std::uint64_t> seed;
  bool single_decay = false;
  bool no_augment = false;
  int checkpoint_every = 0;
};

struct TrainArgs {
  std::string data;
  std::string out;
  ModelArgs model;
};

struct InferArgs {
  std::string ckpt;
  std::string ms;
  std::string out;
  std::string export_ppm;
};

struct BaselineArgs {
  std::string method;
  std::string ms;
  std::string pan;
  std::string out;
  double gain = 1.0;
  int window = 5;
  std::optional<int> scale;
};

struct EvalReducedArgs {
  std::string pred;
  std::string gt;
  double ratio = 0.25;
};

struct EvalFullArgs {
  std::string pred;
  std::string ms;
  std::string pan;
  double ratio = 0.25;
};

struct GradcheckArgs {
  std::string corrupt;
};

struct AblateArgs {
  std::string data;
  std::vector<Index> mem_slots{16, 32, 64};
  std::vector<int> nin_depths{1, 2, 3};
  ModelArgs model;
};

struct Args {
  GenDataArgs gen;
  TrainArgs train;
  InferArgs infer;
  BaselineArgs baseline;
  EvalReducedArgs eval_reduced;
  EvalFullArgs eval_full;
  GradcheckArgs gradcheck;
  AblateArgs ablate;
};

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--preset", m.preset, "Defaults to start from")
      ->check(CLI::IsMember({"full", "desk"}))
      ->capture_default_str();
  cmd->add_option("--epochs", m.epochs, "Training epochs");
  cmd->add_option("--batch", m.batch, "Batch size");
  cmd->add_option("--lr", m.lr, "Initial learning rate");
  cmd->add_option("--lambda", m.lambda, "Weight of the memorizing loss");
  cmd->add_option("--sparsity-weight", m.sparsity_weight,
                  "Weight of the attention sparsity term inside the memorizing loss");
  cmd->add_option("--scale", m.scale, "Resolution ratio s");
  cmd->add_option("--channels", m.channels, "Feature channels C");
  cmd->add_option("--head-blocks", m.head_blocks, "Residual blocks in the MS head");
  cmd->add_option("--seed", m.seed, "Training seed");
  cmd->add_flag("--single-decay", m.single_decay, "Halve the learning rate only once");
  cmd->add_flag("--no-augment", m.no_augment, "Disable flip augmentation");
}

std::unique_ptr<CLI::App> build_app(Args& a) {
  auto app = std::make_unique<CLI::App>("Memory-based spatial details network for pan-sharpening",
                                        "msdn");
  app->require_subcommand(1);

  auto* gen = app->add_subcommand("gen-data", "Generate a synthetic reduced-resolution dataset");
  gen->add_option("--out", a.gen.out, "Output directory")->required();
  gen->add_option("--count", a.gen.count, "Number of samples")->required();
  gen->add_option("--size", a.gen.size, "GT/PAN side length")->required();
  gen->add_option("--seed", a.gen.seed, "Dataset seed")->required();
  gen->add_option("--scale", a.gen.scale, "Resolution ratio s")->capture_default_str();
  gen->add_option("--texture", a.gen.texture, "PAN-only texture amplitude")->capture_default_str();

  auto* train = app->add_subcommand("train", "Train a model on a generated dataset");
  train->add_option("--data", a.train.data, "Dataset directory")->required();
  train->add_option("--out", a.train.out, "Checkpoint path")->required();
  train->add_option("--mem-slots", a.train.model.mem_slots, "Memory bank size N");
  train->add_option("--nin-depth", a.train.model.nin_depth, "NIN depth");
  train->add_option("--checkpoint-every", a.train.model.checkpoint_every,
                    "Also write the checkpoint every this many epochs");
  add_model_options(train, a.train.model);

  auto* infer = app->add_subcommand("infer", "Pan-sharpen an MS tensor with a trained model");
  infer->add_option("--ckpt", a.infer.ckpt, "Checkpoint path")->required();
  infer->add_option("--ms", a.infer.ms, "MS tensor (bands, h, w) or (n, bands, h, w)")->required();
  infer->add_option("--out", a.infer.out, "Output HRMS tensor")->required();
  infer->add_option("--export-ppm", a.infer.export_ppm, "Also write bands 0-2 as a PPM image");

  auto* base = app->add_subcommand("baseline", "Classic detail-injection fusion");
  base->add_option("--method", a.baseline.method, "cs, mra-add, sfim or bicubic")->required();
  base->add_option("--ms", a.baseline.ms, "MS tensor (bands, h, w)")->required();
  base->add_option("--pan", a.baseline.pan, "PAN tensor (1, H, W)");
  base->add_option("--out", a.baseline.out, "Output tensor")->required();
  base->add_option("--g", a.baseline.gain, "Injection gain")->capture_default_str();
  base->add_option("--window", a.baseline.window, "Low-pass window")->capture_default_str();
  base->add_option("--scale", a.baseline.scale, "Upsampling factor when no PAN is used (default 4)");

  auto* er = app->add_subcommand("eval-reduced", "Reduced-resolution metrics against a reference");
  er->add_option("--pred", a.eval_reduced.pred, "Prediction tensor")->required();
  er->add_option("--gt", a.eval_reduced.gt, "Reference tensor")->required();
  er->add_option("--ratio", a.eval_reduced.ratio, "PAN/MS pixel size ratio")->capture_default_str();

  auto* ef = app->add_subcommand("eval-full", "Full-resolution no-reference metrics");
  ef->add_option("--pred", a.eval_full.pred, "Fused tensor")->required();
  ef->add_option("--ms", a.eval_full.ms, "MS tensor")->required();
  ef->add_option("--pan", a.eval_full.pan, "PAN tensor")->required();
  ef->add_option("--ratio", a.eval_full.ratio, "PAN/MS pixel size ratio")->capture_default_str();

  auto* gc = app->add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--corrupt", a.gradcheck.corrupt,
                 "Perturb the analytic gradient of this check (negative control)");

  auto* ab = app->add_subcommand("ablate", "Train over memory sizes and NIN depths and compare");
  ab->add_option("--data", a.ablate.data, "Dataset directory")->required();
  ab->add_option("--mem-slots", a.ablate.mem_slots, "Memory bank sizes")->delimiter(',');
  ab->add_option("--nin-depth", a.ablate.nin_depths, "NIN depths")->delimiter(',');
  add_model_options(ab, a.ablate.model);
  return app;
}

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("MSDN_SEED");
  if (text == nullptr || *text == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != std::string(text).size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("MSDN_SEED is not an unsigned integer: '") + text + "'");
  }
}

TrainConfig train_config(const ModelArgs& m) {
  TrainConfig c = m.preset == "desk" ? TrainConfig::desk() : TrainConfig{};
  if (m.epochs) c.epochs = *m.epochs;
  if (m.batch) c.batch = *m.batch;
  if (m.lr) c.lr = *m.lr;
  if (m.lambda) c.loss.lambda = *m.lambda;
  if (m.sparsity_weight) c.loss.sparsity_weight = *m.sparsity_weight;
  if (m.mem_slots) c.model.msdn.memory_slots = *m.mem_slots;
  if (m.scale) c.model.msdn.scale = *m.scale;
  if (m.channels) c.model.msdn.channels = *m.channels;
  if (m.nin_depth) c.model.nin_depth = *m.nin_depth;
  if (m.head_blocks) c.model.head_blocks = *m.head_blocks;
  if (m.seed) c.seed = *m.seed;
  if (const auto s = env_seed()) c.seed = *s;
  c.repeated_decay = !m.single_decay;
  c.augment = !m.no_augment;
  c.checkpoint_every = m.checkpoint_every;
  c.validate();
  return c;
}

Tensor<double> as_image(const Tensor<float>& t) { return t.cast<double>(); }

std::vector<SceneSample> training_samples(const DatasetManifest& manifest) {
  std::vector<SceneSample> samples = load_split(manifest, Split::kTrain);
  if (samples.empty()) {
    throw FormatError(manifest.root.string() + ": dataset has no training samples");
  }
  return samples;
}

void check_scale(const DatasetManifest& manifest, const TrainConfig& c) {
  if (manifest.params.scale != c.model.scale()) {
    throw ShapeError("dataset scale " + std::to_string(manifest.params.scale) +
                     " does not match model scale " + std::to_string(c.model.scale()));
  }
}

json metrics_json(const metrics::MetricsReport& report) {
  json j = json::object();
  for (const auto& [k, v] : report.values) j[k] = v;
  return j;
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.scale < 1) throw UsageError("--scale must be >= 1");
  if (a.count < 1) throw UsageError("--count must be >= 1");
  if (a.size < 1 || a.size % a.scale != 0) {
    throw UsageError("--size " + std::to_string(a.size) + " is not divisible by --scale " +
                     std::to_string(a.scale));
  }
  SceneParams params;
  params.size = a.size;
  params.scale = a.scale;
  params.texture = a.texture;
  const std::uint64_t seed = env_seed().value_or(a.seed);
  const DatasetManifest m = generate_dataset(a.out, a.count, params, seed);
  out << json{{"root", a.out},
              {"samples", m.ids.size()},
              {"train", m.ids_in(Split::kTrain).size()},
              {"test", m.ids_in(Split::kTest).size()}}
             .dump()
      << "\n";
  return kSuccess;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig config = train_config(a.model);
  config.checkpoint_path = a.out;
  const DatasetManifest manifest = read_manifest(a.data);
  check_scale(manifest, config);
  Trainer trainer(config, training_samples(manifest));
  const Checkpoint ckpt = trainer.train([&](const EpochReport& r) {
    out << json{{"epoch", r.epoch}, {"step", r.step}, {"lr", r.lr},
                {"l1", r.l1},       {"l_mem", r.l_mem}, {"total", r.total}}
               .dump()
        << std::endl;
  });
  save_checkpoint(a.out, ckpt);
  return kSuccess;
}

int cmd_infer(const InferArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const PansharpenModel<float> model = model_from_checkpoint(ckpt);
  const Tensor<float> ms = load_tensor(a.ms);
  const Index bands = model.config().bands;
  if (ms.rank() != 3 && ms.rank() != 4) {
    throw ShapeError(a.ms + ": expected (bands, h, w) or (n, bands, h, w), got " + ms.shape().str());
  }
  if (ms.dim(-3) != bands) {
    throw ShapeError(a.ms + ": model expects " + std::to_string(bands) + " bands, input has " +
                     std::to_string(ms.dim(-3)) + " bands");
  }
  const Tensor<float> batch =
      ms.rank() == 4 ? ms : reshape(ms, Shape{1, ms.dim(0), ms.dim(1), ms.dim(2)});
  Tensor<float> h;
  {
    NoGradGuard no_grad;
    h = pansharpen(batch, model);
  }
  if (ms.rank() == 3) h = reshape(h, Shape{h.dim(1), h.dim(2), h.dim(3)});
  save_tensor(a.out, h);
  if (!a.export_ppm.empty()) {
    const Index height = h.dim(-2), width = h.dim(-1), plane = height * width;
    const Index channels = bands >= 3 ? 3 : 1;
    export_ppm(a.export_ppm,
               Tensor<double>::from_buffer(Shape{channels, height, width},
                                           h.data().head(channels * plane).cast<double>()));
  }
  return kSuccess;
}

int cmd_baseline(const BaselineArgs& a) {
  static const std::map<std::string, InjectionMode> kModes{
      {"cs", InjectionMode::kComponentSubstitution},
      {"mra-add", InjectionMode::kMraAdditive},
      {"sfim", InjectionMode::kSfimMultiplicative}};
  const bool bicubic = a.method == "bicubic";
  if (!bicubic && !kModes.contains(a.method)) {
    throw UsageError("unknown --method '" + a.method + "' (expected cs, mra-add, sfim or bicubic)");
  }
  if (!bicubic && a.pan.empty()) throw UsageError("--method " + a.method + " requires --pan");

  const Tensor<double> ms = as_image(load_tensor(a.ms));
  if (ms.rank() != 3) throw ShapeError(a.ms + ": expected (bands, h, w), got " + ms.shape().str());
  if (bicubic) {
    NoGradGuard no_grad;
    save_tensor(a.out, bicubic_upsample(ms, a.scale.value_or(4)).cast<float>());
    return kSuccess;
  }

  Tensor<double> pan = as_image(load_tensor(a.pan));
  if (pan.rank() == 2) pan = reshape(pan, Shape{1, pan.dim(0), pan.dim(1)});
  if (pan.rank() != 3 || pan.dim(0) != 1) {
    throw ShapeError(a.pan + ": expected (1, H, W), got " + pan.shape().str());
  }
  const Index h = ms.dim(1), w = ms.dim(2);
  if (pan.dim(1) % h != 0 || pan.dim(2) % w != 0 || pan.dim(1) / h != pan.dim(2) / w) {
    throw ShapeError("PAN " + pan.shape().str() + " is not an integer multiple of MS " +
                     ms.shape().str());
  }
  const int scale = static_cast<int>(pan.dim(1) / h);
  if (a.scale && *a.scale != scale) {
    throw ShapeError("--scale " + std::to_string(*a.scale) + " disagrees with the PAN/MS ratio " +
                     std::to_string(scale));
  }
  InjectionConfig config;
  config.gain = {a.gain};
  config.hp_window = a.window;
  config.mode = kModes.at(a.method);
  NoGradGuard no_grad;
  save_tensor(a.out, inject(bicubic_upsample(ms, scale), pan, config).cast<float>());
  return kSuccess;
}

int cmd_eval_reduced(const EvalReducedArgs& a, std::ostream& out) {
  const Tensor<double> pred = as_image(load_tensor(a.pred));
  const Tensor<double> gt = as_image(load_tensor(a.gt));
  if (!(pred.shape() == gt.shape())) {
    throw ShapeError("prediction " + pred.shape().str() + " and reference " + gt.shape().str() +
                     " differ in shape");
  }
  metrics::MetricsConfig config;
  config.resolution_ratio = a.ratio;
  out << metrics_json(metrics::reduced_resolution(pred, gt, config)).dump() << "\n";
  return kSuccess;
}

int cmd_eval_full(const EvalFullArgs& a, std::ostream& out) {
  const Tensor<double> fused = as_image(load_tensor(a.pred));
  const Tensor<double> ms = as_image(load_tensor(a.ms));
  const Tensor<double> pan = as_image(load_tensor(a.pan));
  metrics::MetricsConfig config;
  config.resolution_ratio = a.ratio;
  out << metrics_json(metrics::full_resolution(fused, ms, pan, config)).dump() << "\n";
  return kSuccess;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  GradcheckOptions options;
  if (!a.corrupt.empty()) {
    const std::vector<std::string> names = gradcheck_names();
    if (std::find(names.begin(), names.end(), a.corrupt) == names.end()) {
      throw UsageError("--corrupt: unknown check '" + a.corrupt + "'");
    }
    options.corrupt = a.corrupt;
  }
  const std::vector<GradcheckEntry> report = run_gradcheck(options);
  std::vector<std::string> failed;
  for (const GradcheckEntry& e : report) {
    std::ostringstream line;
    line << std::left << std::setw(22) << e.name << std::scientific << std::setprecision(3)
         << e.max_rel_error << "  " << (e.passed ? "ok" : "FAIL");
    out << line.str() << "\n";
    if (!e.passed) failed.push_back(e.name);
  }
  if (failed.empty()) return kSuccess;
  err << "gradient check failed:";
  for (const std::string& n : failed) err << " " << n;
  err << "\n";
  return kNumericError;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig base = train_config(a.model);
  const DatasetManifest manifest = read_manifest(a.data);
  check_scale(manifest, base);
  const std::vector<SceneSample> train = training_samples(manifest);
  std::vector<SceneSample> test = load_split(manifest, Split::kTest);
  if (test.empty()) {
    err << "dataset has no test split, evaluating on the training samples\n";
    test = train;
  }

  out << std::left << std::setw(10) << "mem_slots" << std::setw(10) << "nin_depth" << std::setw(14)
      << "final_loss" << std::setw(12) << "sam" << std::setw(12) << "ergas" << std::setw(12)
      << "scc" << "q4\n";
  for (const Index n : a.mem_slots) {
    for (const int depth : a.nin_depths) {
      TrainConfig c = base;
      c.model.msdn.memory_slots = n;
      c.model.nin_depth = depth;
      c.validate();
      Trainer trainer(c, train);
      trainer.train();
      std::map<std::string, double> mean;
      {
        NoGradGuard no_grad;
        for (const SceneSample& s : test) {
          const Batch b = stack_samples({s});
          const Tensor<float> pred = pansharpen(b.ms, trainer.model());
          const auto report = metrics::reduced_resolution(as_image(pred), as_image(s.gt));
          for (const auto& [k, v] : report.values) mean[k] += v / double(test.size());
        }
      }
      std::ostringstream row;
      row << std::left << std::setw(10) << n << std::setw(10) << depth << std::fixed
          << std::setprecision(6) << std::setw(14) << trainer.evaluate_loss() << std::setw(12)
          << mean["sam"] << std::setw(12) << mean["ergas"] << std::setw(12) << mean["scc"]
          << mean["q4"];
      out << row.str() << std::endl;
    }
  }
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Args a;
  auto app = build_app(a);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app->exit(e, out, err) == 0 ? kSuccess : kUsage;
  }

  try {
    const CLI::App* cmd = app->get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "gen-data") return cmd_gen_data(a.gen, out);
    if (name == "train") return cmd_train(a.train, out);
    if (name == "infer") return cmd_infer(a.infer);
    if (name == "baseline") return cmd_baseline(a.baseline);
    if (name == "eval-reduced") return cmd_eval_reduced(a.eval_reduced, out);
    if (name == "eval-full") return cmd_eval_full(a.eval_full, out);
    if (name == "gradcheck") return cmd_gradcheck(a.gradcheck, out, err);
    if (name == "ablate") return cmd_ablate(a.ablate, out, err);
    err << "unhandled command " << name << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParameterError& e) {
    err << "invalid parameter: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const DegenerateInputError& e) {
    err << "degenerate input: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
}

std::vector<std::string> command_names() {
  Args a;
  auto app = build_app(a);
  std::vector<std::string> names;
  for (const CLI::App* cmd : app->get_subcommands({})) names.push_back(cmd->get_name());
  return names;
}

std::vector<std::string> command_options(const std::string& subcommand) {
  Args a;
  auto app = build_app(a);
  const CLI::App* cmd = app->get_subcommand(subcommand);
  std::vector<std::string> names;
  for (const CLI::Option* opt : cmd->get_options()) {
    for (const std::string& l : opt->get_lnames()) names.push_back("--" + l);
  }
  return names;
}

}  // namespace msdn::cli
