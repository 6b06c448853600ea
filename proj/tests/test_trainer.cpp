#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "msdn/ops.hpp"
#include "msdn/trainer.hpp"
#include "support.hpp"

using namespace msdn;
using msdn::testing::TempDir;
using msdn::testing::random_tensor;

namespace {

TrainConfig small_config() {
  TrainConfig c = TrainConfig::desk();
  c.batch = 2;
  c.model.msdn.channels = 4;
  c.model.msdn.memory_slots = 4;
  c.model.head_blocks = 1;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

std::vector<SceneSample> small_data(Index count = 5) {
  SceneParams p = SceneParams::desk();
  p.size = 16;
  return generate_samples(count, p, 21);
}

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size() || a.epoch != b.epoch || a.step != b.step ||
      a.adam_step != b.adam_step || a.cursor != b.cursor)
    return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].name != b.tensors[i].name || !bit_equal(a.tensors[i].value, b.tensors[i].value))
      return false;
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(lr_at(0, c) == 4e-4);
  CHECK(lr_at(49, c) == 4e-4);
  CHECK(lr_at(50, c) == doctest::Approx(2e-4).epsilon(1e-15));
  CHECK(lr_at(149, c) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(199, c) == doctest::Approx(5e-5).epsilon(1e-15));
  c.repeated_decay = false;
  CHECK(lr_at(199, c) == doctest::Approx(2e-4).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(-1, c), ParameterError);
}

TEST_CASE("adam first step") {
  ParameterStore<double> store;
  const Tensor<double> theta = store.create("theta", Shape{1}, Buffer<double>::Zero(1));
  AdamState state;
  backward(sum(theta));
  adam_step(store, state, 0.1);
  CHECK(theta.item() == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(state.step == 1);
  CHECK_FALSE(theta.grad_touched());
  CHECK(theta.grad()[0] == 0.0);
}

TEST_CASE("adam leaves parameters with zero gradient unchanged") {
  ParameterStore<double> store;
  const Tensor<double> a = store.create("a", Shape{2}, Buffer<double>::Constant(2, 0.5));
  const Tensor<double> b = store.create("b", Shape{2}, Buffer<double>::Constant(2, 0.5));
  AdamState state;
  backward(sum(mul(a, Tensor<double>::zeros(Shape{2}))));
  backward(sum(b));
  adam_step(store, state, 0.1);
  CHECK(a.data()[0] == 0.5);
  CHECK(b.data()[0] < 0.5);
}

TEST_CASE("adam without gradients is a contract error") {
  ParameterStore<float> store;
  store.create("w", Shape{3}, Buffer<float>::Ones(3));
  AdamState state;
  CHECK_THROWS_AS(adam_step(store, state, 0.1), ContractError);
}

TEST_CASE("identical gradient sequences keep models identical") {
  Rng rng(4);
  const Tensor<double> x = random_tensor(Shape{1, 4, 4, 4}, rng, 0, 1);
  ModelConfig mc = small_config().model;
  PansharpenModel<double> a(mc, 9), b(mc, 9);
  AdamState sa, sb;
  for (int i = 0; i < 3; ++i) {
    backward(mean(pansharpen(x, a)));
    backward(mean(pansharpen(x, b)));
    adam_step(a.parameters(), sa, 1e-3);
    adam_step(b.parameters(), sb, 1e-3);
  }
  for (std::size_t i = 0; i < a.parameters().all().size(); ++i)
    CHECK(bit_equal(a.parameters().all()[i].value, b.parameters().all()[i].value));
}

TEST_CASE("epoch permutation") {
  const auto o = epoch_order(5, 3, 10);
  auto sorted = o;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < 10; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  CHECK(epoch_order(5, 3, 10) == o);
  CHECK(epoch_order(5, 4, 10) != o);
}

TEST_CASE("zero residual path with lambda 0 gives zero loss") {
  Rng rng(5);
  std::vector<SceneSample> data;
  for (int i = 0; i < 2; ++i) {
    SceneSample s;
    s.id = "s" + std::to_string(i);
    s.ms = random_tensor<float>(Shape{4, 4, 4}, rng, 0, 1);
    s.gt = reshape(bicubic_upsample(reshape(s.ms, Shape{1, 4, 4, 4}), 4), Shape{4, 16, 16});
    s.hp = random_tensor<float>(Shape{1, 16, 16}, rng);
    data.push_back(s);
  }
  TrainConfig c = small_config();
  c.loss.lambda = 0;
  c.augment = false;
  Trainer t(c, data);
  t.model().parameters().zero_values("nin.");
  CHECK(t.evaluate(stack_samples(data)).total.item() == 0.0f);
  CHECK(t.step().total == 0.0);
}

TEST_CASE("training steps, epochs and losses") {
  Trainer t(small_config(), small_data());
  CHECK(t.steps_per_epoch() == 3);
  const StepReport first = t.step();
  CHECK(first.step == 0);
  CHECK(std::isfinite(first.total));
  CHECK(first.total == doctest::Approx(first.l1 + 1e-3 * first.l_mem).epsilon(1e-5));
  const EpochReport e = t.run_epoch();
  CHECK(e.epoch == 0);
  CHECK(e.step == 3);
  CHECK(t.epoch() == 1);
  CHECK(e.lr == 4e-4);
  CHECK(std::isfinite(t.evaluate_loss()));
}

TEST_CASE("the memory bank is updated by training") {
  Trainer t(small_config(), small_data());
  const Buffer<float> before = t.model().memory_network().memory.items.data();
  for (int i = 0; i < 3; ++i) t.step();
  CHECK_FALSE((t.model().memory_network().memory.items.data() == before).all());
}

TEST_CASE("invalid datasets") {
  CHECK_THROWS_AS(Trainer(small_config(), {}), ConfigError);
  TrainConfig c = small_config();
  c.model.msdn.scale = 2;
  CHECK_THROWS_AS(Trainer(c, small_data()), ShapeError);
  c = small_config();
  c.lr = 0;
  CHECK_THROWS_AS(Trainer(c, small_data()), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  TrainConfig c = small_config();
  c.loss.sparsity_weight = 0.5;
  Trainer t(c, small_data());
  t.step();
  t.step();
  const Checkpoint ckpt = t.checkpoint();
  CHECK(ckpt.find("msdn.memory") != nullptr);
  CHECK(ckpt.find("msdn.memory#m") != nullptr);
  CHECK(ckpt.find("msdn.memory#v") != nullptr);
  save_checkpoint(dir / "a.ckpt", ckpt);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(same_checkpoint(ckpt, back));
  CHECK(back.config.loss.sparsity_weight == 0.5);
  CHECK(back.config.model.msdn.channels == 4);
  CHECK(encode_checkpoint(back) == read_file(dir / "a.ckpt"));

  Rng rng(6);
  const Tensor<float> ms = random_tensor<float>(Shape{1, 4, 4, 4}, rng, 0, 1);
  NoGradGuard no_grad;
  CHECK(bit_equal(pansharpen(ms, t.model()), pansharpen(ms, model_from_checkpoint(back))));
}

TEST_CASE("checkpoint format errors") {
  TempDir dir("ckpt_bad");
  Trainer t(small_config(), small_data(2));
  std::string bytes = encode_checkpoint(t.checkpoint());
  CHECK(bytes.substr(0, 4) == "MSDC");

  std::string bumped = bytes;
  bumped[4] = static_cast<char>(Checkpoint::kVersion + 1);
  write_file(dir / "v.ckpt", bumped);
  CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), VersionError);

  write_file(dir / "t.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), FormatError);

  std::string magic = bytes;
  magic[1] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
}

TEST_CASE("resuming from a checkpoint replays the same run") {
  TempDir dir("resume");
  const auto data = small_data();
  Trainer straight(small_config(), data);
  for (int i = 0; i < 5; ++i) straight.step();

  Trainer first(small_config(), data);
  for (int i = 0; i < 2; ++i) first.step();
  save_checkpoint(dir / "mid.ckpt", first.checkpoint());
  Trainer resumed(load_checkpoint(dir / "mid.ckpt"), data);
  for (int i = 0; i < 3; ++i) resumed.step();

  CHECK(same_checkpoint(straight.checkpoint(), resumed.checkpoint()));
}

TEST_CASE("seeded training is bit-reproducible and saves periodic checkpoints") {
  TempDir dir("periodic");
  TrainConfig c = small_config();
  c.checkpoint_every = 1;
  c.checkpoint_path = dir / "periodic.ckpt";
  int epochs_seen = 0;
  Trainer a(c, small_data());
  const Checkpoint ca = a.train([&](const EpochReport&) { ++epochs_seen; });
  CHECK(epochs_seen == 2);
  CHECK(std::filesystem::exists(c.checkpoint_path));
  CHECK(same_checkpoint(load_checkpoint(c.checkpoint_path), ca));

  Trainer b(c, small_data());
  CHECK(encode_checkpoint(b.train()) == encode_checkpoint(ca));

  c.seed = 4;
  Trainer other(c, small_data());
  CHECK_FALSE(encode_checkpoint(other.train()) == encode_checkpoint(ca));
}

TEST_CASE("pearson correlation") {
  Eigen::ArrayXd a(4), b(4);
  a << 1, 2, 3, 4;
  b << 2, 4, 6, 8;
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  CHECK(pearson(a, -b) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pearson(a, Eigen::ArrayXd::Constant(4, 1.0)), DegenerateInputError);
}

}  // TEST_SUITE
