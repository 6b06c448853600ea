#pragma once

#include "msdn/tensor.hpp"

namespace msdn {

struct LossConfig {
  double lambda = 1e-3;       // weight of the memorizing loss
  double kl_epsilon = 1e-12;  // added inside the logarithms
  double sparsity_weight = 1.0;  // weight of the L1 coefficient penalty inside L_Mem
  void validate() const;
};

// Mean absolute error.
template <typename S>
Tensor<S> l1_loss(const Tensor<S>& prediction, const Tensor<S>& target);

// Sum of |M_C| over all elements, divided by the batch size (axis 0).
template <typename S>
Tensor<S> sparsity_loss(const Tensor<S>& coefficients);

// Each batch item of both inputs is flattened and softmax-normalized into a
// distribution; returns the batch mean of sum p * (ln(p + eps) - ln(q + eps)).
template <typename S>
Tensor<S> kl_divergence(const Tensor<S>& p_logits, const Tensor<S>& q_logits,
                        double epsilon = 1e-12);

// KL(HP || P_s) + sparsity_weight * sparsity(M_C).
template <typename S>
Tensor<S> memorizing_loss(const Tensor<S>& high_pass, const Tensor<S>& spatial_details,
                          const Tensor<S>& coefficients, const LossConfig& config = {});

template <typename S>
struct LossTerms {
  Tensor<S> reconstruction;  // L1
  Tensor<S> memorizing;      // L_Mem
  Tensor<S> total;           // L1 + lambda * L_Mem
};

template <typename S>
LossTerms<S> total_loss(const Tensor<S>& prediction, const Tensor<S>& target,
                        const Tensor<S>& high_pass, const Tensor<S>& spatial_details,
                        const Tensor<S>& coefficients, const LossConfig& config = {});

}  // namespace msdn
