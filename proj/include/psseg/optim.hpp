// Adam and the step-wise learning-rate schedule used for training.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace psseg {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for one parameter tensor. The step counter lives in the
// optimizer so every tensor shares it.
template <typename Real>
struct AdamMoments {
  std::vector<Real> first;
  std::vector<Real> second;
};

// One bias-corrected Adam update of `params` in place. `step` is the 1-based
// index of this update.
template <typename Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamMoments<Real>& moments,
               std::int64_t step, double lr, const AdamOptions& opt) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: gradient size does not match parameter size");
  if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");
  if (moments.first.empty()) {
    moments.first.assign(params.size(), Real(0));
    moments.second.assign(params.size(), Real(0));
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const auto b1 = static_cast<Real>(opt.beta1);
  const auto b2 = static_cast<Real>(opt.beta2);
  const auto step_size = static_cast<Real>(lr / bc1);
  const auto sqrt_bc2 = static_cast<Real>(std::sqrt(bc2));
  const auto eps = static_cast<Real>(opt.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = grads[i];
    Real& m = moments.first[i];
    Real& v = moments.second[i];
    m = b1 * m + (Real(1) - b1) * g;
    v = b2 * v + (Real(1) - b2) * g * g;
    params[i] -= step_size * m / (std::sqrt(v) / sqrt_bc2 + eps);
  }
}

// base_lr * gamma^(number of milestones <= epoch); epochs are 0-based and a
// milestone takes effect at the start of its epoch.
inline double multistep_lr(double base_lr, std::size_t epoch, std::span<const std::size_t> milestones,
                           double gamma) {
  double lr = base_lr;
  for (std::size_t m : milestones)
    if (m <= epoch) lr *= gamma;
  return lr;
}

}  // namespace psseg
