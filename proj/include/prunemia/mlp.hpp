#pragma once

#include <string>
#include <utility>
#include <vector>

#include "prunemia/graph.hpp"
#include "prunemia/rng.hpp"
#include "prunemia/tensor.hpp"

namespace prunemia {

// Fully connected classifier: input -> hidden layers (ReLU) -> softmax head.
struct MlpSpec {
  std::int64_t input_dim = 0;
  std::vector<std::int64_t> hidden{256, 128};
  std::int64_t num_classes = 0;

  void validate() const {
    if (input_dim <= 0 || num_classes <= 0)
      throw std::invalid_argument("MlpSpec: input_dim and num_classes must be positive");
    for (auto h : hidden)
      if (h <= 0) throw std::invalid_argument("MlpSpec: hidden widths must be positive");
  }
};

// Dense parameter store. Weights are [out x in] so row i holds the incoming
// weights of neuron i. scales, when present, hold one trainable factor per
// hidden neuron (network-slimming analog of batch-norm scaling).
struct MlpModel {
  MlpSpec spec;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::vector<Tensor> scales;

  bool has_scales() const { return !scales.empty(); }
  std::size_t num_layers() const { return weights.size(); }

  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.emplace_back("w" + std::to_string(i), &weights[i]);
      out.emplace_back("b" + std::to_string(i), &biases[i]);
    }
    for (std::size_t i = 0; i < scales.size(); ++i)
      out.emplace_back("s" + std::to_string(i), &scales[i]);
    return out;
  }
};

inline Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

inline MlpModel init_mlp(const MlpSpec& spec, bool with_scales, Rng& rng) {
  spec.validate();
  MlpModel m;
  m.spec = spec;
  std::vector<std::int64_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.num_classes);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    m.weights.push_back(kaiming_uniform({dims[l + 1], dims[l]}, dims[l], rng));
    m.biases.push_back(Tensor::zeros({dims[l + 1]}));
  }
  if (with_scales)
    for (auto h : spec.hidden) m.scales.push_back(Tensor::ones({h}));
  return m;
}

// Tape handles for one training step.
struct MlpVars {
  std::vector<Var> w, b, s;
};

inline MlpVars mlp_leaves(Graph& g, const MlpModel& m) {
  MlpVars v;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    v.w.push_back(g.leaf("w" + std::to_string(i), m.weights[i]));
    v.b.push_back(g.leaf("b" + std::to_string(i), m.biases[i]));
  }
  for (std::size_t i = 0; i < m.scales.size(); ++i)
    v.s.push_back(g.leaf("s" + std::to_string(i), m.scales[i]));
  return v;
}

// Hidden layers apply the scale factor pre-activation, mirroring where a
// batch-norm scale would sit.
inline Var mlp_logits(const MlpVars& v, Var x) {
  Var h = x;
  const std::size_t L = v.w.size();
  for (std::size_t l = 0; l + 1 < L; ++l) {
    h = linear(h, v.w[l], v.b[l]);
    if (!v.s.empty()) h = mul(h, v.s[l]);
    h = relu(h);
  }
  return linear(h, v.w[L - 1], v.b[L - 1]);
}

// Inference path without a tape; numerics match the tape ops.
inline Tensor mlp_logits_fast(const MlpModel& m, const Tensor& x) {
  if (x.last_dim() != m.spec.input_dim)
    throw ShapeError("mlp_forward: input " + shape_str(x.shape()) + " does not match input_dim " +
                     std::to_string(m.spec.input_dim));
  Tensor h = x;
  const std::size_t L = m.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor& w = m.weights[l];
    const std::int64_t rows = h.lead_rows(), in = h.last_dim(), out_dim = w.dim(0);
    Tensor z({rows, out_dim});
    gemm_nt(h.data(), w.data(), z.data(), rows, in, out_dim);
    const Tensor& bias = m.biases[l];
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < out_dim; ++c) z[r * out_dim + c] += bias[c];
    if (l + 1 < L) {
      if (m.has_scales()) {
        const Tensor& s = m.scales[l];
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < out_dim; ++c) z[r * out_dim + c] *= s[c];
      }
      for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = z[i] > 0 ? z[i] : 0.0;
    }
    h = std::move(z);
  }
  return h;
}

// Softmax posteriors, one row per input sample.
inline Tensor mlp_posterior(const MlpModel& m, const Tensor& x) {
  Tensor z = mlp_logits_fast(m, x);
  Tensor p(z.shape());
  detail::softmax_rows(z.data(), p.data(), z.lead_rows(), z.last_dim());
  if (!p.all_finite()) throw NumericError("mlp_forward: produced non-finite posterior");
  return p;
}

inline int argmax_row(const Tensor& t, std::int64_t row) {
  const std::int64_t d = t.last_dim();
  int best = 0;
  for (std::int64_t c = 1; c < d; ++c)
    if (t[row * d + c] > t[row * d + best]) best = static_cast<int>(c);
  return best;
}

inline double accuracy(const MlpModel& m, const Tensor& x, const std::vector<int>& y) {
  Tensor z = mlp_logits_fast(m, x);
  std::int64_t correct = 0;
  for (std::int64_t r = 0; r < z.lead_rows(); ++r)
    if (argmax_row(z, r) == y[static_cast<std::size_t>(r)]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(z.lead_rows());
}

inline Tensor one_hot(const std::vector<int>& labels, std::int64_t num_classes) {
  Tensor t({static_cast<std::int64_t>(labels.size()), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::invalid_argument("one_hot: label out of range");
    t[static_cast<std::int64_t>(i) * num_classes + labels[i]] = 1.0;
  }
  return t;
}

}  // namespace prunemia
