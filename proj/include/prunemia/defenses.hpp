#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/graph.hpp"
#include "prunemia/mlp.hpp"
#include "prunemia/optim.hpp"
#include "prunemia/rng.hpp"

namespace prunemia::defense {

enum class DefenseKind { Basic, DP, ADV, PPB };

inline const char* defense_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::Basic: return "basic";
    case DefenseKind::DP: return "dp";
    case DefenseKind::ADV: return "adv";
    case DefenseKind::PPB: return "ppb";
  }
  return "?";
}

inline DefenseKind defense_from_name(const std::string& s) {
  if (s == "basic") return DefenseKind::Basic;
  if (s == "dp") return DefenseKind::DP;
  if (s == "adv") return DefenseKind::ADV;
  if (s == "ppb") return DefenseKind::PPB;
  throw std::invalid_argument("unknown defense '" + s + "'");
}

// Early stopping and L2 regularization (Basic) are active in every kind; the
// other fields select and parameterize the extra mechanism.
struct DefenseConfig {
  DefenseKind kind = DefenseKind::Basic;
  double lambda = 4.0;      // PPB balance
  double sigma = 1.0;       // DP noise multiplier
  double clip_norm = 1.0;   // DP per-sample clip
  double alpha = 1.0;       // ADV balance
  double dp_lr = 0.01;      // DP fine-tuning uses plain SGD
  double weight_decay = 5e-4;
  int patience = 5;
  int max_epochs = 100;

  void validate() const {
    if (lambda < 0 || sigma < 0 || alpha < 0)
      throw std::invalid_argument("DefenseConfig: hyper-parameters must be non-negative");
    if (clip_norm <= 0) throw std::invalid_argument("DefenseConfig: clip_norm must be positive");
    if (patience < 0 || max_epochs < 0)
      throw std::invalid_argument("DefenseConfig: patience/max_epochs must be non-negative");
  }

  std::string id() const {
    std::string s = defense_name(kind);
    switch (kind) {
      case DefenseKind::PPB: s += "-l" + std::to_string(lambda); break;
      case DefenseKind::DP: s += "-s" + std::to_string(sigma); break;
      case DefenseKind::ADV: s += "-a" + std::to_string(alpha); break;
      default: break;
    }
    return s;
  }
};

// KL(P || Q) = sum_x P(x) log(P(x)/Q(x)); Q clamped below at 1e-12 and zero-P
// terms contribute zero.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: dimension mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || q[i] < 0) throw std::invalid_argument("kl_divergence: negative entry");
    sp += p[i];
    sq += q[i];
  }
  if (std::fabs(sp - 1.0) > 1e-9 || std::fabs(sq - 1.0) > 1e-9)
    throw std::invalid_argument("kl_divergence: inputs must sum to 1");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return kl;
}

// Per-row permutation sorting values in decreasing order, ties broken by the
// original class index.
inline std::vector<std::int64_t> descending_perm(const Tensor& t) {
  const std::int64_t rows = t.lead_rows(), d = t.last_dim();
  std::vector<std::int64_t> perm(static_cast<std::size_t>(rows * d));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t* pr = perm.data() + r * d;
    std::iota(pr, pr + d, 0);
    std::sort(pr, pr + d, [&](std::int64_t a, std::int64_t b) {
      const double va = t[r * d + a], vb = t[r * d + b];
      if (va != vb) return va > vb;
      return a < b;
    });
  }
  return perm;
}

// Pair-based posterior balancing (the KL regularizer over randomly paired,
// rank-sorted batch posteriors). Gradients flow through both pair members;
// the sort is a fixed gather chosen at forward time.
inline Var ppb_loss(Var batch_posteriors, double lambda, Rng& pair_rng) {
  const Tensor& pv = batch_posteriors.value();
  const std::int64_t B = pv.lead_rows();
  if (B < 2) throw std::invalid_argument("ppb_loss: batch must hold at least 2 samples");
  Var sorted = gather_last(batch_posteriors, descending_perm(pv));
  std::vector<std::int64_t> order(static_cast<std::size_t>(B));
  std::iota(order.begin(), order.end(), 0);
  pair_rng.shuffle(order);
  std::vector<std::int64_t> js, ks;
  for (std::int64_t i = 0; i + 1 < B; i += 2) {
    js.push_back(order[static_cast<std::size_t>(i)]);
    ks.push_back(order[static_cast<std::size_t>(i + 1)]);
  }
  Var p = select_rows(sorted, js);
  Var q = select_rows(sorted, ks);
  Var log_ratio = sub(log_op(clamp_min(p, 1e-12)), log_op(clamp_min(q, 1e-12)));
  return scale(sum_all(mul(p, log_ratio)), lambda);
}

// DP-SGD step: clip each per-sample gradient to norm <= clip_norm, average,
// inject N(0, (sigma * clip_norm)^2) per coordinate into the sum, and apply a
// plain SGD update. sigma = 0 skips the draw entirely so it is bit-identical
// to the un-noised step.
inline void dp_sgd_step(const std::vector<Tensor*>& params,
                        std::vector<std::vector<Tensor>>& per_sample_grads, double clip_norm,
                        double sigma, double lr, Rng& noise_rng) {
  if (sigma < 0) throw std::invalid_argument("dp_sgd_step: sigma must be non-negative");
  if (clip_norm <= 0) throw std::invalid_argument("dp_sgd_step: clip_norm must be positive");
  if (per_sample_grads.empty()) throw std::invalid_argument("dp_sgd_step: no gradients");
  const double B = static_cast<double>(per_sample_grads.size());
  for (auto& sample : per_sample_grads) {
    if (sample.size() != params.size()) throw ShapeError("dp_sgd_step: param count mismatch");
    double sq = 0.0;
    for (const auto& g : sample)
      for (std::int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const double f = clip_norm / norm;
      for (auto& g : sample)
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= f;
    }
  }
  for (std::size_t j = 0; j < params.size(); ++j) {
    Tensor& p = *params[j];
    if (!p.same_shape(per_sample_grads[0][j])) throw ShapeError("dp_sgd_step: shape mismatch");
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      double sum = 0.0;
      for (auto& sample : per_sample_grads) sum += sample[j][i];
      if (sigma > 0) sum += sigma * clip_norm * noise_rng.normal();
      p[i] -= lr * (sum / B);
    }
  }
}

// Best-validation tracker; stops once the loss has not strictly improved for
// `patience` consecutive epochs.
template <typename Params>
struct EarlyStopState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  Params best_params{};
  bool has_snapshot = false;
};

template <typename Params>
bool early_stopping_update(EarlyStopState<Params>& st, double val_loss, const Params& params,
                           int patience) {
  if (!std::isfinite(val_loss))
    throw std::invalid_argument("early_stopping_update: non-finite validation loss");
  if (val_loss < st.best_val_loss) {
    st.best_val_loss = val_loss;
    st.epochs_since_improvement = 0;
    st.best_params = params;
    st.has_snapshot = true;
    return false;
  }
  st.epochs_since_improvement += 1;
  return st.epochs_since_improvement >= patience;
}

inline Var mlp_l2(const MlpVars& v) {
  Var acc = sum_all(mul(v.w[0], v.w[0]));
  for (std::size_t i = 1; i < v.w.size(); ++i) acc = add(acc, sum_all(mul(v.w[i], v.w[i])));
  return acc;
}

// One min-max alternation of adversarial regularization: (a) one optimizer
// step on the surrogate membership classifier (posterior ⊕ one-hot features,
// batch = members, pool draw = non-members); (b) one step on the target
// minimizing prediction loss minus alpha times the surrogate's loss on the
// member batch. The surrogate is frozen during (b) but gradients flow through
// the posteriors into the target.
inline void adv_fine_tune_step(MlpModel& target, AdamState& target_opt, double lr,
                               double weight_decay, MlpModel& surrogate, AdamState& surrogate_opt,
                               const Tensor& member_x, const std::vector<int>& member_y,
                               const Tensor& pool_x, const std::vector<int>& pool_y,
                               double alpha) {
  const std::int64_t K = target.spec.num_classes;
  const std::int64_t nm = member_x.dim(0), nn = pool_x.dim(0);

  auto optimizer_step = [](MlpModel& m, Graph& g, AdamState& st, double step_lr_) {
    std::vector<Tensor*> params;
    std::vector<Tensor> grads;
    for (auto& [name, t] : m.named_params()) {
      params.push_back(t);
      grads.push_back(g.leaf_grad(name));
    }
    std::vector<const Tensor*> gp;
    for (auto& t : grads) gp.push_back(&t);
    adam_step(params, gp, st, step_lr_);
  };

  {  // surrogate step on detached features
    Tensor pm = mlp_posterior(target, member_x);
    Tensor pn = mlp_posterior(target, pool_x);
    Tensor feat({nm + nn, 2 * K});
    Tensor oh_m = one_hot(member_y, K), oh_n = one_hot(pool_y, K);
    for (std::int64_t r = 0; r < nm; ++r)
      for (std::int64_t c = 0; c < K; ++c) {
        feat[r * 2 * K + c] = pm[r * K + c];
        feat[r * 2 * K + K + c] = oh_m[r * K + c];
      }
    for (std::int64_t r = 0; r < nn; ++r)
      for (std::int64_t c = 0; c < K; ++c) {
        feat[(nm + r) * 2 * K + c] = pn[r * K + c];
        feat[(nm + r) * 2 * K + K + c] = oh_n[r * K + c];
      }
    std::vector<int> is_member(static_cast<std::size_t>(nm + nn), 0);
    for (std::int64_t r = 0; r < nm; ++r) is_member[static_cast<std::size_t>(r)] = 1;
    Graph g;
    MlpVars sv = mlp_leaves(g, surrogate);
    Var loss = cross_entropy(mlp_logits(sv, g.input(feat)), is_member);
    g.backward(loss);
    optimizer_step(surrogate, g, surrogate_opt, lr);
  }

  {  // defender step
    Graph g;
    MlpVars tv = mlp_leaves(g, target);
    Var logits = mlp_logits(tv, g.input(member_x));
    Var pred_loss = cross_entropy(logits, member_y);
    Var total = add(pred_loss, scale(mlp_l2(tv), weight_decay / 2.0));
    if (alpha != 0.0) {
      Var post = softmax(logits);
      Var feat = concat({post, g.input(one_hot(member_y, K))});
      MlpVars sv;  // frozen surrogate: plain inputs, not leaves
      for (std::size_t l = 0; l < surrogate.weights.size(); ++l) {
        sv.w.push_back(g.input(surrogate.weights[l]));
        sv.b.push_back(g.input(surrogate.biases[l]));
      }
      std::vector<int> member_truth(static_cast<std::size_t>(nm), 1);
      Var sur_loss = cross_entropy(mlp_logits(sv, feat), member_truth);
      total = add(total, scale(sur_loss, -alpha));
    }
    g.backward(total);
    optimizer_step(target, g, target_opt, lr);
  }
}

}  // namespace prunemia::defense
