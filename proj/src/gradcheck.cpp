#include "msdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msdn/injection_net.hpp"
#include "msdn/losses.hpp"

namespace msdn {

namespace {

using T = Tensor<double>;

double weighted_sum(const T& out, const Buffer<double>& weights) {
  return (out.data() * weights).sum();
}

// Values in +-[0.1, 1], away from the kinks of relu, abs and prelu.
T signed_leaf(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  Buffer<double> b(shape.numel());
  for (Index i = 0; i < b.size(); ++i) b[i] = (rng() & 1u) ? mag(rng) : -mag(rng);
  return T::leaf(shape, std::move(b));
}

T uniform_leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer<double> b(shape.numel());
  for (Index i = 0; i < b.size(); ++i) b[i] = u(rng);
  return T::leaf(shape, std::move(b));
}

struct Check {
  std::string name;
  std::function<double(Rng&, double, bool)> run;
};

Check unary(std::string name, Shape shape, std::function<T(const T&)> f, bool signed_input = false) {
  return {name, [=](Rng& rng, double h, bool corrupt) {
            const T x = signed_input ? signed_leaf(shape, rng) : uniform_leaf(shape, rng);
            return max_gradient_error([&](const std::vector<T>& in) { return f(in[0]); }, {x}, rng, h,
                                      corrupt);
          }};
}

Check binary(std::string name, Shape a, Shape b, std::function<T(const T&, const T&)> f) {
  return {name, [=](Rng& rng, double h, bool corrupt) {
            const T x = uniform_leaf(a, rng), y = uniform_leaf(b, rng, 0.2, 1.0);
            return max_gradient_error([&](const std::vector<T>& in) { return f(in[0], in[1]); }, {x, y},
                                      rng, h, corrupt);
          }};
}

// Moves biases off their zero initialisation so that no activation sits
// exactly on a ReLU kink.
void jitter_biases(ParameterStore<double>& store, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (Parameter<double>& p : store.all()) {
    if (!p.name.ends_with(".bias")) continue;
    for (Index i = 0; i < p.value.numel(); ++i) p.value.mutable_data()[i] = u(rng);
  }
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.msdn.memory_slots = 2;
  c.msdn.scale = 2;
  c.msdn.channels = 2;
  c.msdn.spatial_kernel = 3;
  c.head_blocks = 1;
  c.nin_depth = 2;
  return c;
}

std::vector<Check> all_checks() {
  std::vector<Check> checks;
  checks.push_back({"conv2d", [](Rng& rng, double h, bool corrupt) {
                      const T x = uniform_leaf(Shape{2, 3, 5, 5}, rng);
                      const T w = uniform_leaf(Shape{4, 3, 3, 3}, rng);
                      const T b = uniform_leaf(Shape{4}, rng);
                      return max_gradient_error(
                          [](const std::vector<T>& in) { return conv2d(in[0], in[1], in[2]); },
                          {x, w, b}, rng, h, corrupt);
                    }});
  checks.push_back({"conv2d_1x1", [](Rng& rng, double h, bool corrupt) {
                      const T x = uniform_leaf(Shape{1, 3, 4, 6}, rng);
                      const T w = uniform_leaf(Shape{2, 3, 1, 1}, rng);
                      const T b = uniform_leaf(Shape{2}, rng);
                      return max_gradient_error(
                          [](const std::vector<T>& in) { return conv2d(in[0], in[1], in[2]); },
                          {x, w, b}, rng, h, corrupt);
                    }});
  checks.push_back({"prelu", [](Rng& rng, double h, bool corrupt) {
                      const T x = signed_leaf(Shape{2, 3, 4, 4}, rng);
                      const T a = uniform_leaf(Shape{1}, rng, 0.1, 0.5);
                      return max_gradient_error([](const std::vector<T>& in) { return prelu(in[0], in[1]); },
                                                {x, a}, rng, h, corrupt);
                    }});
  checks.push_back({"prelu_channel", [](Rng& rng, double h, bool corrupt) {
                      const T x = signed_leaf(Shape{2, 3, 4, 4}, rng);
                      const T a = uniform_leaf(Shape{3}, rng, 0.1, 0.5);
                      return max_gradient_error([](const std::vector<T>& in) { return prelu(in[0], in[1]); },
                                                {x, a}, rng, h, corrupt);
                    }});
  checks.push_back(unary("relu", Shape{2, 3, 4, 4}, [](const T& x) { return relu(x); }, true));
  checks.push_back(unary("sigmoid", Shape{2, 3, 4, 4}, [](const T& x) { return sigmoid(x); }));
  checks.push_back(unary("abs", Shape{2, 3, 4, 4}, [](const T& x) { return abs(x); }, true));
  checks.push_back(unary("neg", Shape{3, 4}, [](const T& x) { return neg(x); }));
  checks.push_back(unary("scale", Shape{3, 4}, [](const T& x) { return scale(x, 1.7); }));
  checks.push_back(binary("add", Shape{2, 3, 4, 4}, Shape{2, 3, 4, 4}, [](const T& a, const T& b) { return add(a, b); }));
  checks.push_back(binary("add_broadcast", Shape{2, 3, 4, 4}, Shape{1, 4}, [](const T& a, const T& b) { return add(a, b); }));
  checks.push_back(binary("sub", Shape{2, 3, 4, 4}, Shape{3, 4, 4}, [](const T& a, const T& b) { return sub(a, b); }));
  checks.push_back(binary("mul", Shape{2, 3, 4, 4}, Shape{2, 3, 4, 4}, [](const T& a, const T& b) { return mul(a, b); }));
  checks.push_back(binary("mul_broadcast", Shape{2, 3, 4, 4}, Shape{3, 1, 1}, [](const T& a, const T& b) { return mul(a, b); }));
  checks.push_back(unary("reduce_sum", Shape{2, 3, 4, 5},
                         [](const T& x) { return reduce(x, {1, 3}, ReduceOp::kSum); }));
  checks.push_back(unary("reduce_mean", Shape{2, 3, 4, 5},
                         [](const T& x) { return reduce(x, {-3}, ReduceOp::kMean, true); }));
  checks.push_back(unary("reduce_max", Shape{2, 3, 4, 5},
                         [](const T& x) { return reduce(x, {1}, ReduceOp::kMax, true); }));
  checks.push_back(unary("sum", Shape{2, 3, 4}, [](const T& x) { return sum(x); }));
  checks.push_back(unary("mean", Shape{2, 3, 4}, [](const T& x) { return mean(x); }));
  checks.push_back(unary("reshape", Shape{2, 3, 4}, [](const T& x) { return reshape(x, Shape{4, 6}); }));
  checks.push_back(unary("bicubic_upsample", Shape{1, 2, 4, 5}, [](const T& x) { return bicubic_upsample(x, 2); }));
  checks.push_back(unary("bicubic_upsample_x4", Shape{2, 1, 3, 3}, [](const T& x) { return bicubic_upsample(x, 4); }));
  checks.push_back(unary("box_filter", Shape{1, 2, 6, 7}, [](const T& x) { return box_filter(x, 5); }));
  checks.push_back(binary("concat_channels", Shape{2, 3, 4, 4}, Shape{2, 2, 4, 4},
                          [](const T& a, const T& b) { return concat_channels(a, b); }));
  checks.push_back(unary("avg_pool2", Shape{2, 3, 4, 6}, [](const T& x) { return avg_pool2(x); }));
  checks.push_back(unary("upsample_nearest", Shape{2, 3, 2, 3}, [](const T& x) { return upsample_nearest(x, 2); }));
  checks.push_back(unary("flip_horizontal", Shape{2, 3, 4}, [](const T& x) { return flip(x, true); }));
  checks.push_back(unary("flip_vertical", Shape{2, 3, 4}, [](const T& x) { return flip(x, false); }));

  checks.push_back(binary("l1_loss", Shape{2, 4, 4, 4}, Shape{2, 4, 4, 4},
                          [](const T& a, const T& b) { return l1_loss(a, b); }));
  checks.push_back(unary("sparsity_loss", Shape{2, 3, 4, 4}, [](const T& x) { return sparsity_loss(x); }, true));
  checks.push_back(binary("kl_divergence", Shape{2, 1, 4, 4}, Shape{2, 1, 4, 4},
                          [](const T& p, const T& q) { return kl_divergence(p, q, 1e-12); }));
  checks.push_back({"total_loss", [](Rng& rng, double h, bool corrupt) {
                      const T pred = uniform_leaf(Shape{2, 4, 4, 4}, rng);
                      const T gt = uniform_leaf(Shape{2, 4, 4, 4}, rng);
                      const T hp = uniform_leaf(Shape{2, 1, 4, 4}, rng);
                      const T ps = uniform_leaf(Shape{2, 1, 4, 4}, rng);
                      const T mc = signed_leaf(Shape{2, 2, 4, 4}, rng);
                      LossConfig cfg;
                      cfg.lambda = 0.5;
                      return max_gradient_error(
                          [&](const std::vector<T>& in) {
                            return total_loss(in[0], in[1], in[2], in[3], in[4], cfg).total;
                          },
                          {pred, gt, hp, ps, mc}, rng, h, corrupt);
                    }});

  checks.push_back({"expand_memory", [](Rng& rng, double h, bool corrupt) {
                      MemoryBank<double> bank{uniform_leaf(Shape{3, 4}, rng)};
                      return max_gradient_error(
                          [&](const std::vector<T>& in) {
                            return expand_memory(MemoryBank<double>{in[0]}, 4, 6);
                          },
                          {bank.items}, rng, h, corrupt);
                    }});
  checks.push_back({"msdn_forward", [](Rng& rng, double h, bool corrupt) {
                      const ModelConfig cfg = tiny_model_config();
                      ParameterStore<double> store;
                      const MsdnWeights<double> w = MsdnWeights<double>::create(store, cfg.msdn, rng);
                      jitter_biases(store, rng);
                      std::vector<T> inputs{uniform_leaf(Shape{1, 2, 4, 4}, rng)};
                      for (const Parameter<double>& p : store.all()) inputs.push_back(p.value);
                      return max_gradient_error(
                          [&](const std::vector<T>& in) {
                            const MsdnOutput<double> out = msdn_forward(in[0], w);
                            return concat_channels(out.spatial_details, out.coefficients);
                          },
                          inputs, rng, h, corrupt);
                    }});
  checks.push_back({"end_to_end", [](Rng& rng, double h, bool corrupt) {
                      PansharpenModel<double> model(tiny_model_config(), rng());
                      jitter_biases(model.parameters(), rng);
                      const T ms = T::from_buffer(Shape{1, 4, 4, 4}, uniform_leaf(Shape{64}, rng, 0, 1).data());
                      const T gt = T::from_buffer(Shape{1, 4, 8, 8}, uniform_leaf(Shape{256}, rng, 0, 1).data());
                      const T hp = T::from_buffer(Shape{1, 1, 8, 8}, uniform_leaf(Shape{64}, rng, -0.5, 0.5).data());
                      LossConfig loss;
                      loss.lambda = 0.1;
                      std::vector<T> inputs;
                      for (const Parameter<double>& p : model.parameters().all()) inputs.push_back(p.value);
                      return max_gradient_error(
                          [&](const std::vector<T>&) {
                            const PansharpenOutput<double> out = pansharpen_detailed(ms, model);
                            return total_loss(out.hrms, gt, hp, out.spatial_details, out.coefficients, loss)
                                .total;
                          },
                          inputs, rng, h, corrupt);
                    }});
  return checks;
}

}  // namespace

double max_gradient_error(const GradFunction& f, const std::vector<T>& inputs, Rng& rng, double step,
                          bool corrupt) {
  for (const T& x : inputs) {
    if (!x.requires_grad()) throw ContractError("gradcheck inputs must be trainable leaves");
  }
  std::vector<T> leaves = inputs;
  for (T& x : leaves) x.zero_grad();

  const T out = f(leaves);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Buffer<double> weights(out.numel());
  for (Index i = 0; i < weights.size(); ++i) weights[i] = u(rng);
  backward(sum(mul(out, T::from_buffer(out.shape(), weights))));

  double worst = 0;
  NoGradGuard no_grad;
  for (T& x : leaves) {
    Buffer<double> analytic = x.has_grad() ? x.grad() : Buffer<double>::Zero(x.numel());
    if (corrupt) analytic *= 1.01;
    Buffer<double> numeric(x.numel());
    Buffer<double>& values = x.mutable_data();
    for (Index i = 0; i < x.numel(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = weighted_sum(f(leaves), weights);
      values[i] = saved - step;
      const double down = weighted_sum(f(leaves), weights);
      values[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    const double scale = std::max({analytic.abs().maxCoeff(), numeric.abs().maxCoeff(),
                                   std::numeric_limits<double>::min()});
    worst = std::max(worst, (analytic - numeric).abs().maxCoeff() / scale);
    x.zero_grad();
  }
  return worst;
}

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const Check& c : all_checks()) names.push_back(c.name);
  return names;
}

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckEntry> report;
  for (const Check& c : all_checks()) {
    Rng rng(options.seed);
    GradcheckEntry e;
    e.name = c.name;
    e.max_rel_error = c.run(rng, options.step, c.name == options.corrupt);
    e.passed = e.max_rel_error < options.tolerance;
    report.push_back(e);
  }
  return report;
}

}  // namespace msdn
