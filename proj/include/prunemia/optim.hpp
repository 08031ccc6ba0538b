#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "prunemia/tensor.hpp"

namespace prunemia {

// Adam with bias correction. Moment buffers are created lazily on the first
// step and shape-checked against their parameters afterwards.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state, double lr) {
  if (lr <= 0) throw std::invalid_argument("adam_step: lr must be positive");
  if (params.size() != grads.size()) throw ShapeError("adam_step: param/grad count mismatch");
  if (state.first_moment.empty()) {
    for (Tensor* p : params) {
      state.first_moment.push_back(Tensor::zeros(p->shape()));
      state.second_moment.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("adam_step: state holds a different parameter count");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!p.same_shape(g) || !p.same_shape(m))
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// SGD with classical momentum; momentum_coeff = 0 reduces to vanilla SGD.
struct SgdState {
  std::vector<Tensor> momentum_buffer;
  double momentum_coeff = 0.0;
};

inline void sgd_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                     SgdState& state, double lr) {
  if (lr <= 0) throw std::invalid_argument("sgd_step: lr must be positive");
  if (params.size() != grads.size()) throw ShapeError("sgd_step: param/grad count mismatch");
  if (state.momentum_buffer.empty())
    for (Tensor* p : params) state.momentum_buffer.push_back(Tensor::zeros(p->shape()));
  if (state.momentum_buffer.size() != params.size())
    throw ShapeError("sgd_step: state holds a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& buf = state.momentum_buffer[i];
    if (!p.same_shape(g) || !p.same_shape(buf))
      throw ShapeError("sgd_step: shape mismatch at parameter " + std::to_string(i));
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      buf[j] = state.momentum_coeff * buf[j] + g[j];
      p[j] -= lr * buf[j];
    }
  }
}

// Step schedule: base rate for the first half of training, /10 until 3/4,
// /100 afterwards.
inline double step_lr(int epoch, double base_lr, int total_epochs) {
  if (epoch < 0 || epoch >= total_epochs)
    throw std::invalid_argument("step_lr: epoch " + std::to_string(epoch) + " out of [0," +
                                std::to_string(total_epochs) + ")");
  if (2 * epoch < total_epochs) return base_lr;
  if (4 * epoch < 3 * total_epochs) return base_lr / 10.0;
  return base_lr / 100.0;
}

}  // namespace prunemia
