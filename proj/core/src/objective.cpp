#include "zpressor/objective.hpp"

#include <algorithm>
#include <cmath>

#include "zpressor/error.hpp"

namespace zp {

double kl_diag_gaussian(const Tensor& mean, const Tensor& logvar) {
  if (mean.shape() != logvar.shape()) {
    throw ShapeError("kl_diag_gaussian: mean " + shape_str(mean.shape()) +
                     " vs logvar " + shape_str(logvar.shape()));
  }
  double kl = 0;
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    const double mu = mean[i], lv = logvar[i];
    kl += 0.5 * mu * mu + 0.5 * std::max(0.0, std::expm1(lv) - lv);
  }
  return mean.empty() ? 0.0 : kl / static_cast<double>(mean.rows());
}

double task_loss(const Tensor& pred, const Tensor& target, TaskLoss kind) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("task_loss: pred " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  switch (kind) {
    case TaskLoss::kMse:
      break;
  }
  if (pred.numel() == 0) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

LossReport make_report(double task, double kl, double beta) {
  if (!(beta >= 0)) throw InvalidInput("ib_loss: beta must be >= 0");
  LossReport r;
  r.task = task;
  r.kl = kl;
  r.beta = beta;
  r.total = beta == 0 ? task : task + beta * kl;
  return r;
}

LossReport ib_loss(const Tensor& pred, const Tensor& target, const LatentState& latent,
                   double beta) {
  return make_report(task_loss(pred, target),
                     kl_diag_gaussian(latent.posterior_mean, latent.posterior_logvar),
                     beta);
}

}  // namespace zp
