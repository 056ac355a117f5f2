#pragma once

// Central finite-difference verification of analytic gradients.
//
// f must be deterministic and scalar-valued; results for a non-deterministic
// f are meaningless. Intended for 64-bit tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "alcfcn/tensor.hpp"

namespace alcfcn {

// max over coordinates of |analytic - numeric| / max(1, |analytic|).
inline double gradient_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                             const Tensor<double>& x, double h = 1e-6,
                             const std::vector<std::size_t>& coordinates = {}) {
  auto leaf = Tensor<double>::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  auto loss = f(leaf);
  // A loss that does not depend on x (e.g. an empty penalty) has zero gradient.
  if (loss.requires_grad()) loss.backward();
  std::vector<double> analytic(leaf.numel(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  std::vector<std::size_t> coords = coordinates;
  if (coords.empty()) {
    coords.resize(leaf.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  std::vector<double> probe(x.data().begin(), x.data().end());
  for (std::size_t i : coords) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(Tensor<double>::from_data(x.shape(), probe)).item();
    probe[i] = saved - h;
    const double down = f(Tensor<double>::from_data(x.shape(), probe)).item();
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

// Same check against a tensor that is captured by `loss_fn` (e.g. a model
// parameter): its data is perturbed in place and restored afterwards.
inline double gradient_check_inplace(const std::function<Tensor<double>()>& loss_fn, Tensor<double>& param,
                                     const std::vector<std::size_t>& coordinates, double h = 1e-6) {
  param.zero_grad();
  auto loss = loss_fn();
  if (loss.requires_grad()) loss.backward();
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  param.zero_grad();

  NoGradGuard no_grad;
  double worst = 0.0;
  auto values = param.mutable_data();
  for (std::size_t i : coordinates) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss_fn().item();
    values[i] = saved - h;
    const double down = loss_fn().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace alcfcn
