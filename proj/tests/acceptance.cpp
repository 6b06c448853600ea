// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "metric_oracles.hpp"
#include "msdn/classic_fusion.hpp"
#include "msdn/cli.hpp"
#include "msdn/gradcheck.hpp"
#include "msdn/metrics.hpp"
#include "msdn/ops.hpp"
#include "msdn/trainer.hpp"
#include "support.hpp"

using namespace msdn;
using msdn::testing::TempDir;
using msdn::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void gradient_suite(Outcome& o) {
  const auto start = Clock::now();
  const auto report = run_gradcheck();
  const double elapsed = seconds_since(start);
  double worst = 0;
  for (const auto& e : report) {
    worst = std::max(worst, e.max_rel_error);
    o.require(e.passed, e.name);
  }
  const auto names = gradcheck_names();
  o.require(std::find(names.begin(), names.end(), "end_to_end") != names.end(), "end_to_end check present");
  o.require(elapsed < 60, "runtime < 60 s");
  o.detail << report.size() << " checks, max rel error " << worst << ", " << elapsed << " s";
}

void metric_identity(Outcome& o) {
  Rng rng(101);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor<double> x = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
    o.require(metrics::sam(x, x) == 0, "sam(X,X) = 0");
    o.require(metrics::ergas(x, x) == 0, "ergas(X,X) = 0");
    const double scc = metrics::scc(x, x), q4 = metrics::q4(x, x);
    worst = std::max({worst, std::abs(scc - 1), std::abs(q4 - 1)});
    o.require(std::abs(scc - 1) <= 1e-9, "scc(X,X) = 1");
    o.require(std::abs(q4 - 1) <= 1e-9, "q4(X,X) = 1");
  }
  o.require(metrics::qnr(0, 0) == 1, "qnr(0, 0) = 1");
  o.detail << "20 tensors 4x8x8, max |scc-1|,|q4-1| = " << worst;
}

void metric_oracles(Outcome& o) {
  namespace oracle = msdn::testing::oracle;
  Rng rng(202);
  double worst = 0;
  auto agree = [&](double a, double b, const char* name) {
    worst = std::max(worst, std::abs(a - b));
    o.require(std::abs(a - b) < 1e-9, name);
  };
  for (int i = 0; i < 50; ++i) {
    const Tensor<double> x = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
    const Tensor<double> y = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
    const Tensor<double> ms = random_tensor(Shape{4, 4, 4}, rng, 0.05, 1);
    const Tensor<double> pan = random_tensor(Shape{1, 8, 8}, rng, 0.05, 1);
    agree(metrics::sam(x, y), oracle::sam(x, y), "sam");
    agree(metrics::ergas(x, y), oracle::ergas(x, y, 0.25), "ergas");
    agree(metrics::scc(x, y), oracle::scc(x, y), "scc");
    agree(metrics::q4(x, y), oracle::q4(x, y), "q4");
    const double dl = metrics::d_lambda(ms, x), ds = metrics::d_s(ms, x, pan);
    const double odl = oracle::d_lambda(ms, x), ods = oracle::d_s(ms, x, pan);
    agree(dl, odl, "d_lambda");
    agree(ds, ods, "d_s");
    agree(metrics::qnr(dl, ds), oracle::qnr(odl, ods), "qnr");
    o.require(metrics::d_lambda(ms, upsample_nearest(ms, 2)) == 0.0, "d_lambda of nearest upsample");
  }
  o.detail << "50 instances, max deviation " << worst << ", d_lambda(nearest) exactly 0";
}

void shape_identity(Outcome& o) {
  Rng rng(303);
  ModelConfig config = TrainConfig::desk().model;
  for (int s : {2, 4}) {
    config.msdn.scale = s;
    PansharpenModel<double> model(config, 7);
    const Tensor<double> ms = random_tensor(Shape{2, 4, 5, 6}, rng, 0, 1);
    NoGradGuard no_grad;
    const auto out = pansharpen_detailed(ms, model);
    o.require(out.hrms.shape() == Shape{2, 4, 5 * s, 6 * s}, "output is s x input");
    o.require(out.spatial_details.shape() == Shape{2, 1, 5 * s, 6 * s}, "P_s single channel");
    model.parameters().zero_values("nin.");
    o.require(bit_equal(pansharpen(ms, model), bicubic_upsample(ms, s)), "zeroed Y path gives bicubic");
  }
  o.detail << "scales 2 and 4, P_s (n,1,H,W), zeroed injection path bit-equal to bicubic";
}

void training_sanity(Outcome& o) {
  const auto start = Clock::now();
  const auto data = generate_samples(16, SceneParams::desk(), 7);
  TrainConfig c = TrainConfig::desk();
  c.seed = 1;
  Trainer t(c, data);
  const double before = t.evaluate_loss();
  const StepReport first = t.step();
  StepReport last = first;
  for (int i = 1; i < 200; ++i) last = t.step();
  const double after = t.evaluate_loss();
  const double elapsed = seconds_since(start);
  o.require(t.steps() == 200, "200 steps");
  o.require(after <= 0.5 * before, "loss halved");
  o.require(elapsed < 300, "runtime < 5 min");
  o.detail << "total loss " << before << " -> " << after << " (step 0 batch " << first.total << ", step 199 batch "
           << last.total << "), " << elapsed << " s";
}

void memorization(Outcome& o) {
  TempDir dir("acceptance_mem");
  const auto samples = generate_samples(4, SceneParams::desk(), 11);
  TrainConfig c = TrainConfig::desk();
  c.seed = 2;
  c.epochs = 500;
  c.decay_every = 1000;
  c.lr = 2e-3;
  c.loss.lambda = 1000;
  c.loss.sparsity_weight = 0;
  c.model.head_blocks = 0;
  c.checkpoint_every = 50;
  c.checkpoint_path = dir / "mem.ckpt";
  Trainer t(c, samples);
  const double initial = spatial_detail_correlation(t.model(), samples);
  t.train();
  const Checkpoint final_ckpt = load_checkpoint(c.checkpoint_path);
  const double final_corr = spatial_detail_correlation(model_from_checkpoint(final_ckpt), samples);
  o.require(final_ckpt.step == 500, "final checkpoint after 500 steps");
  o.require(final_corr - initial >= 0.3, "correlation gain >= 0.3");
  o.detail << "corr(P_s, HP) " << initial << " -> " << final_corr << " after " << final_ckpt.step << " steps";
}

void ms_only_inference(Outcome& o) {
  TempDir dir("acceptance_infer");
  const auto options = cli::command_options("infer");
  for (const auto& opt : options) o.require(opt.find("pan") == std::string::npos, "no PAN flag: " + opt);

  TrainConfig c = TrainConfig::desk();
  c.model.msdn.channels = 4;
  c.model.msdn.memory_slots = 4;
  c.epochs = 1;
  Trainer t(c, generate_samples(4, SceneParams::desk(), 3));
  save_checkpoint(dir / "m.ckpt", t.train());
  Rng rng(404);
  const Tensor<float> ms = random_tensor<float>(Shape{4, 8, 8}, rng, 0, 1);
  save_tensor(dir / "ms.msdt", ms);
  std::ostringstream out, err;
  const int code = cli::run({"infer", "--ckpt", (dir / "m.ckpt").string(), "--ms", (dir / "ms.msdt").string(),
                             "--out", (dir / "h.msdt").string()},
                            out, err);
  o.require(code == 0, "infer exit code 0: " + err.str());
  if (code == 0) o.require(load_tensor(dir / "h.msdt").shape() == Shape{4, 32, 32}, "HRMS shape");
  std::ostringstream flags;
  for (const auto& opt : options) flags << opt << " ";
  o.detail << "infer flags: " << flags.str() << "-> (4,32,32) HRMS";
}

void baseline_ordering(Outcome& o) {
  SceneParams params;
  const auto scenes = generate_samples(8, params, 505);
  double mra = 0, bicubic = 0;
  NoGradGuard no_grad;
  for (const auto& s : scenes) {
    const Tensor<double> up = bicubic_upsample(s.ms.cast<double>(), params.scale);
    const Tensor<double> gt = s.gt.cast<double>();
    InjectionConfig cfg;
    cfg.mode = InjectionMode::kMraAdditive;
    mra += metrics::scc(inject(up, s.pan.cast<double>(), cfg), gt) / 8;
    bicubic += metrics::scc(up, gt) / 8;
  }
  o.require(mra > bicubic, "mra-add scc > bicubic scc");
  o.detail << "mean SCC over 8 scenes: mra-add " << mra << ", bicubic " << bicubic;
}

void determinism(Outcome& o) {
  TempDir dir("acceptance_det");
  const auto data = generate_samples(8, SceneParams::desk(), 606);
  TrainConfig c = TrainConfig::desk();
  c.model.msdn.channels = 8;
  c.model.msdn.memory_slots = 8;
  c.epochs = 3;
  c.seed = 17;
  Trainer a(c, data), b(c, data);
  const Checkpoint ca = a.train(), cb = b.train();
  o.require(encode_checkpoint(ca) == encode_checkpoint(cb), "identical seeds give identical checkpoints");

  save_checkpoint(dir / "a.ckpt", ca);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  o.require(encode_checkpoint(back) == read_file(dir / "a.ckpt"), "checkpoint round trip");

  Rng rng(607);
  const Tensor<float> t = random_tensor<float>(Shape{2, 4, 8, 8}, rng, -3, 3);
  save_tensor(dir / "t.msdt", t);
  o.require(bit_equal(load_tensor(dir / "t.msdt"), t), "tensor round trip");

  NoGradGuard no_grad;
  const Tensor<float> ms = random_tensor<float>(Shape{2, 4, 8, 8}, rng, 0, 1);
  o.require(bit_equal(pansharpen(ms, a.model()), pansharpen(ms, model_from_checkpoint(back))),
            "inference identical after reload");
  o.detail << "checkpoint " << read_file(dir / "a.ckpt").size() << " bytes, bit-identical runs and reloads";
}

void ablation(Outcome& o) {
  TempDir dir("acceptance_ablate");
  const std::string data = (dir / "data").string();
  std::ostringstream gen_out, out, err;
  o.require(cli::run({"gen-data", "--out", data, "--count", "8", "--size", "32", "--seed", "707"}, gen_out, err) == 0,
            "gen-data");
  const int code = cli::run({"ablate", "--data", data, "--preset", "desk", "--epochs", "2", "--mem-slots",
                             "16,32,64", "--nin-depth", "1,2,3"},
                            out, err);
  o.require(code == 0, "ablate exit code 0: " + err.str());
  std::istringstream table(out.str());
  int rows = 0;
  for (std::string line; std::getline(table, line);) {
    std::cout << "    " << line << "\n";
    ++rows;
  }
  o.require(rows == 10, "header plus 9 rows");
  o.detail << "N in {16,32,64} x depth in {1,2,3}, " << rows - 1 << " rows";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"gradient suite", gradient_suite},
      {"metric identity suite", metric_identity},
      {"metric oracle suite", metric_oracles},
      {"shape/identity suite", shape_identity},
      {"training sanity", training_sanity},
      {"memorization property", memorization},
      {"MS-only inference", ms_only_inference},
      {"baseline ordering", baseline_ordering},
      {"determinism and persistence", determinism},
      {"ablation hooks", ablation},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      check(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail.str() << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
