#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/mlp.hpp"
#include "prunemia/tensor.hpp"

namespace prunemia::prune {

enum class PruneMethod { L1Unstructured, L1Structured, L2Structured, Slimming };

inline const char* method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::L1Unstructured: return "l1_unstructured";
    case PruneMethod::L1Structured: return "l1_structured";
    case PruneMethod::L2Structured: return "l2_structured";
    case PruneMethod::Slimming: return "slimming";
  }
  return "?";
}

inline PruneMethod method_from_name(const std::string& s) {
  if (s == "l1_unstructured") return PruneMethod::L1Unstructured;
  if (s == "l1_structured") return PruneMethod::L1Structured;
  if (s == "l2_structured") return PruneMethod::L2Structured;
  if (s == "slimming") return PruneMethod::Slimming;
  throw std::invalid_argument("unknown pruning method '" + s + "'");
}

// Binary keep/remove pattern mirroring the model's parameter tensors.
struct Mask {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::vector<Tensor> scales;

  static Mask ones_like(const MlpModel& m) {
    Mask k;
    for (const auto& w : m.weights) k.weights.push_back(Tensor::ones(w.shape()));
    for (const auto& b : m.biases) k.biases.push_back(Tensor::ones(b.shape()));
    for (const auto& s : m.scales) k.scales.push_back(Tensor::ones(s.shape()));
    return k;
  }

  std::int64_t zero_count() const {
    std::int64_t n = 0;
    auto count = [&n](const std::vector<Tensor>& ts) {
      for (const auto& t : ts)
        for (std::int64_t i = 0; i < t.numel(); ++i)
          if (t[i] == 0.0) ++n;
    };
    count(weights);
    count(biases);
    count(scales);
    return n;
  }
};

// round(gamma * count), half away from zero.
inline std::int64_t prune_count(double gamma, std::int64_t count) {
  return std::llround(gamma * static_cast<double>(count));
}

namespace detail {

inline void validate_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("compute_mask: sparsity must be in [0,1), got " +
                                std::to_string(gamma));
}

inline void validate_finite(const MlpModel& m) {
  for (const auto& w : m.weights)
    if (!w.all_finite()) throw std::invalid_argument("compute_mask: non-finite parameters");
}

// Zeroes neuron `i` of hidden layer `l`: its incoming weight row, its bias,
// and (when present) its scale factor.
inline void remove_neuron(Mask& mask, const MlpModel& m, std::size_t l, std::int64_t i) {
  const std::int64_t in = m.weights[l].dim(1);
  for (std::int64_t c = 0; c < in; ++c) mask.weights[l][i * in + c] = 0.0;
  mask.biases[l][i] = 0.0;
  if (!mask.scales.empty()) mask.scales[l][i] = 0.0;
}

}  // namespace detail

// Mask under the requested criterion at sparsity `gamma`. The output layer is
// never pruned. Magnitude ties break toward the lower flat index so masks are
// deterministic and nested across increasing gamma.
inline Mask compute_mask(const MlpModel& m, PruneMethod method, double gamma) {
  detail::validate_gamma(gamma);
  detail::validate_finite(m);
  if (m.num_layers() < 2)
    throw std::invalid_argument("compute_mask: model has no hidden layers to prune");
  if (method == PruneMethod::Slimming && !m.has_scales())
    throw std::invalid_argument("compute_mask: slimming requires scale factors");
  Mask mask = Mask::ones_like(m);
  const std::size_t hidden_layers = m.num_layers() - 1;

  if (method == PruneMethod::L1Unstructured) {
    std::int64_t total = 0;
    for (std::size_t l = 0; l < hidden_layers; ++l) total += m.weights[l].numel();
    const std::int64_t k = prune_count(gamma, total);
    std::vector<std::pair<double, std::int64_t>> mags;
    mags.reserve(static_cast<std::size_t>(total));
    std::int64_t flat = 0;
    for (std::size_t l = 0; l < hidden_layers; ++l)
      for (std::int64_t i = 0; i < m.weights[l].numel(); ++i, ++flat)
        mags.emplace_back(std::fabs(m.weights[l][i]), flat);
    std::sort(mags.begin(), mags.end());
    for (std::int64_t j = 0; j < k; ++j) {
      std::int64_t f = mags[static_cast<std::size_t>(j)].second;
      for (std::size_t l = 0; l < hidden_layers; ++l) {
        if (f < m.weights[l].numel()) {
          mask.weights[l][f] = 0.0;
          break;
        }
        f -= m.weights[l].numel();
      }
    }
    return mask;
  }

  for (std::size_t l = 0; l < hidden_layers; ++l) {
    const Tensor& w = m.weights[l];
    const std::int64_t H = w.dim(0), in = w.dim(1);
    std::vector<std::pair<double, std::int64_t>> rank;
    rank.reserve(static_cast<std::size_t>(H));
    for (std::int64_t i = 0; i < H; ++i) {
      double score = 0.0;
      switch (method) {
        case PruneMethod::L1Structured:
          for (std::int64_t c = 0; c < in; ++c) score += std::fabs(w[i * in + c]);
          break;
        case PruneMethod::L2Structured: {
          for (std::int64_t c = 0; c < in; ++c) score += w[i * in + c] * w[i * in + c];
          score = std::sqrt(score);
          break;
        }
        case PruneMethod::Slimming:
          score = std::fabs(m.scales[l][i]);
          break;
        default:
          break;
      }
      rank.emplace_back(score, i);
    }
    std::sort(rank.begin(), rank.end());
    const std::int64_t k = prune_count(gamma, H);
    for (std::int64_t j = 0; j < k; ++j)
      detail::remove_neuron(mask, m, l, rank[static_cast<std::size_t>(j)].second);
  }
  return mask;
}

// params ⊙ mask.
inline MlpModel apply_mask(const MlpModel& m, const Mask& mask) {
  if (mask.weights.size() != m.weights.size() || mask.scales.size() != m.scales.size())
    throw ShapeError("apply_mask: mask does not match model layout");
  MlpModel out = m;
  auto mul_into = [](std::vector<Tensor>& ts, const std::vector<Tensor>& ms) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (!ts[i].same_shape(ms[i])) throw ShapeError("apply_mask: shape mismatch");
      for (std::int64_t j = 0; j < ts[i].numel(); ++j) ts[i][j] *= ms[i][j];
    }
  };
  mul_into(out.weights, mask.weights);
  mul_into(out.biases, mask.biases);
  mul_into(out.scales, mask.scales);
  return out;
}

inline void apply_mask_inplace(MlpModel& m, const Mask& mask) {
  auto mul_into = [](std::vector<Tensor>& ts, const std::vector<Tensor>& ms) {
    for (std::size_t i = 0; i < ts.size(); ++i)
      for (std::int64_t j = 0; j < ts[i].numel(); ++j) ts[i][j] *= ms[i][j];
  };
  mul_into(m.weights, mask.weights);
  mul_into(m.biases, mask.biases);
  mul_into(m.scales, mask.scales);
}

}  // namespace prunemia::prune
