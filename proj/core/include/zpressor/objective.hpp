#pragma once

#include "zpressor/tensor.hpp"
#include "zpressor/zpressor.hpp"

namespace zp {

inline constexpr double kDefaultBeta = 1e-5;

struct LossReport {
  double task = 0;
  double kl = 0;
  double beta = 0;
  double total = 0;
};

enum class TaskLoss { kMse };

// KL(N(mean, diag(exp(logvar))) || N(0, I)), summed over the last (latent)
// dimension and averaged over all leading dimensions.
double kl_diag_gaussian(const Tensor& mean, const Tensor& logvar);

double task_loss(const Tensor& pred, const Tensor& target, TaskLoss kind = TaskLoss::kMse);

// task + beta * KL of the latent posterior. Throws InvalidInput for beta < 0.
LossReport ib_loss(const Tensor& pred, const Tensor& target, const LatentState& latent,
                   double beta = kDefaultBeta);

// Assembles a report from already-computed terms.
LossReport make_report(double task, double kl, double beta);

}  // namespace zp
