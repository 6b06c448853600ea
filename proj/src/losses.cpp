#include "msdn/losses.hpp"

#include <cmath>
#include <string>

#include "msdn/ops.hpp"

namespace msdn {

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(kl_epsilon >= 0.0)) throw ConfigError("kl_epsilon must be >= 0");
  if (!(sparsity_weight >= 0.0)) throw ConfigError("sparsity weight must be >= 0");
}

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": " + a.str() + " vs " + b.str());
}

template <typename S>
Index batch_of(const Tensor<S>& t) {
  return t.rank() >= 2 ? t.dim(0) : 1;
}

template <typename S>
Buffer<S> softmax(const Eigen::Ref<const Buffer<S>>& logits) {
  Buffer<S> e = (logits - logits.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

template <typename S>
Tensor<S> l1_loss(const Tensor<S>& prediction, const Tensor<S>& target) {
  require_same(prediction.shape(), target.shape(), "l1_loss");
  return mean(abs(sub(prediction, target)));
}

template <typename S>
Tensor<S> sparsity_loss(const Tensor<S>& coefficients) {
  return scale(sum(abs(coefficients)), S(1) / static_cast<S>(batch_of(coefficients)));
}

template <typename S>
Tensor<S> kl_divergence(const Tensor<S>& p_logits, const Tensor<S>& q_logits, double epsilon) {
  const Index batch = batch_of(p_logits);
  if (batch_of(q_logits) != batch || p_logits.numel() != q_logits.numel()) {
    throw ShapeError("kl_divergence: per-item lengths differ, " + p_logits.shape().str() +
                     " vs " + q_logits.shape().str());
  }
  const Index len = p_logits.numel() / batch;
  const S eps = static_cast<S>(epsilon);
  Buffer<S> p(p_logits.numel()), q(q_logits.numel());
  S total = 0;
  for (Index b = 0; b < batch; ++b) {
    p.segment(b * len, len) = softmax<S>(p_logits.data().segment(b * len, len));
    q.segment(b * len, len) = softmax<S>(q_logits.data().segment(b * len, len));
    const auto pb = p.segment(b * len, len);
    const auto qb = q.segment(b * len, len);
    total += (pb * ((pb + eps).log() - (qb + eps).log())).sum();
  }
  Buffer<S> out = Buffer<S>::Constant(1, total / static_cast<S>(batch));

  return Tensor<S>::make(
      Shape{1}, std::move(out), {p_logits, q_logits},
      [=](const detail::Node<S>& self) {
        const S g = self.grad[0] / static_cast<S>(batch);
        detail::Node<S>& np = *self.parents[0];
        detail::Node<S>& nq = *self.parents[1];
        for (Index b = 0; b < batch; ++b) {
          const auto pb = p.segment(b * len, len);
          const auto qb = q.segment(b * len, len);
          if (np.requires_grad) {
            // d/dp_i, then through the softmax Jacobian.
            const Buffer<S> dp = (pb + eps).log() - (qb + eps).log() + pb / (pb + eps);
            const S inner = (dp * pb).sum();
            np.grad_slot().segment(b * len, len) += g * pb * (dp - inner);
          }
          if (nq.requires_grad) {
            const Buffer<S> dq = -pb / (qb + eps);
            const S inner = (dq * qb).sum();
            nq.grad_slot().segment(b * len, len) += g * qb * (dq - inner);
          }
        }
      });
}

template <typename S>
Tensor<S> memorizing_loss(const Tensor<S>& high_pass, const Tensor<S>& spatial_details,
                          const Tensor<S>& coefficients, const LossConfig& config) {
  require_same(high_pass.shape(), spatial_details.shape(), "memorizing_loss");
  const Tensor<S> kl = kl_divergence(high_pass, spatial_details, config.kl_epsilon);
  if (config.sparsity_weight == 1.0) return add(kl, sparsity_loss(coefficients));
  return add(kl, scale(sparsity_loss(coefficients), static_cast<S>(config.sparsity_weight)));
}

template <typename S>
LossTerms<S> total_loss(const Tensor<S>& prediction, const Tensor<S>& target,
                        const Tensor<S>& high_pass, const Tensor<S>& spatial_details,
                        const Tensor<S>& coefficients, const LossConfig& config) {
  config.validate();
  LossTerms<S> terms;
  terms.reconstruction = l1_loss(prediction, target);
  terms.memorizing = memorizing_loss(high_pass, spatial_details, coefficients, config);
  terms.total =
      add(terms.reconstruction, scale(terms.memorizing, static_cast<S>(config.lambda)));
  return terms;
}

#define MSDN_INSTANTIATE(S)                                                                  \
  template Tensor<S> l1_loss(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> sparsity_loss(const Tensor<S>&);                                        \
  template Tensor<S> kl_divergence(const Tensor<S>&, const Tensor<S>&, double);              \
  template Tensor<S> memorizing_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,   \
                                     const LossConfig&);                                     \
  template LossTerms<S> total_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,     \
                                   const Tensor<S>&, const Tensor<S>&, const LossConfig&);

MSDN_INSTANTIATE(float)
MSDN_INSTANTIATE(double)

}  // namespace msdn
