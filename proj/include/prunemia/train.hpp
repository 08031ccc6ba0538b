#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/data.hpp"
#include "prunemia/defenses.hpp"
#include "prunemia/mask.hpp"
#include "prunemia/mlp.hpp"
#include "prunemia/optim.hpp"

namespace prunemia::train {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 128;
  double slim_l1 = 0.0;  // L1 penalty on scale factors during original training
  std::uint64_t seed = 0;
  std::string stream_label = "train";  // key prefix for every stochastic draw
};

struct TrainReport {
  int epochs_run = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Mean cross-entropy on a frozen model.
inline double eval_ce(const MlpModel& m, const Tensor& x, const std::vector<int>& y) {
  Tensor z = mlp_logits_fast(m, x);
  const std::int64_t rows = z.lead_rows(), d = z.last_dim();
  Tensor logp(z.shape());
  detail::log_softmax_rows(z.data(), logp.data(), rows, d);
  double s = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) s -= logp[r * d + y[static_cast<std::size_t>(r)]];
  return s / static_cast<double>(rows);
}

namespace detail_train {

inline void adam_from_graph(MlpModel& m, Graph& g, AdamState& st, double lr) {
  std::vector<Tensor*> params;
  std::vector<Tensor> grads;
  for (auto& [name, t] : m.named_params()) {
    params.push_back(t);
    grads.push_back(g.leaf_grad(name));
  }
  std::vector<const Tensor*> gp;
  gp.reserve(grads.size());
  for (auto& t : grads) gp.push_back(&t);
  adam_step(params, gp, st, lr);
}

inline Var batch_loss(Graph& g, const MlpVars& mv, Var logits, const std::vector<int>& by,
                      const TrainConfig& cfg, const defense::DefenseConfig& def, Rng* ppb_rng) {
  Var loss = cross_entropy(logits, by);
  loss = add(loss, scale(defense::mlp_l2(mv), def.weight_decay / 2.0));
  if (cfg.slim_l1 > 0.0 && !mv.s.empty()) {
    Var pen = sum_all(abs_op(mv.s[0]));
    for (std::size_t i = 1; i < mv.s.size(); ++i) pen = add(pen, sum_all(abs_op(mv.s[i])));
    loss = add(loss, scale(pen, cfg.slim_l1));
  }
  if (def.kind == defense::DefenseKind::PPB && by.size() >= 2)
    loss = add(loss, defense::ppb_loss(softmax(logits), def.lambda, *ppb_rng));
  return loss;
}

}  // namespace detail_train

// Trains `m` in place with the configured defense. Basic behavior (early
// stopping on validation cross-entropy, L2 weight decay) applies to every
// defense kind. When `mask` is given it is re-applied after each optimizer
// step so masked entries stay exactly zero. Returns epochs run and the best
// validation loss; parameters end at the best-validation snapshot.
inline TrainReport train_mlp(MlpModel& m, const data::Dataset& ds,
                             const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                             const TrainConfig& cfg, const defense::DefenseConfig& def,
                             const prune::Mask* mask = nullptr) {
  def.validate();
  if (train_idx.empty()) throw std::invalid_argument("train_mlp: empty training set");
  TrainReport report;
  if (def.max_epochs == 0) return report;

  const bool adv = def.kind == defense::DefenseKind::ADV;
  const bool dp = def.kind == defense::DefenseKind::DP;
  if (adv && val_idx.empty())
    throw std::invalid_argument("train_mlp: ADV needs a validation pool of reference non-members");

  MlpModel surrogate;
  AdamState surrogate_opt;
  if (adv) {
    Rng sinit = substream(cfg.seed, cfg.stream_label + "/adv-surrogate-init");
    surrogate = init_mlp(MlpSpec{2 * m.spec.num_classes, {64}, 2}, false, sinit);
  }

  AdamState opt;
  defense::EarlyStopState<MlpModel> stop;
  const Tensor val_x = val_idx.empty() ? Tensor() : ds.rows(val_idx);
  const std::vector<int> val_y = ds.labels_of(val_idx);

  std::vector<int> order = train_idx;
  for (int epoch = 0; epoch < def.max_epochs; ++epoch) {
    Rng shuffle_rng = substream(cfg.seed, cfg.stream_label + "/shuffle", epoch);
    shuffle_rng.shuffle(order);
    const std::int64_t n = static_cast<std::int64_t>(order.size());
    int step = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::int64_t end = std::min<std::int64_t>(start + cfg.batch_size, n);
      std::vector<int> bidx(order.begin() + start, order.begin() + end);
      Tensor bx = ds.rows(bidx);
      std::vector<int> by = ds.labels_of(bidx);

      if (dp) {
        // Per-sample gradients via micro-batches of size one.
        std::vector<std::vector<Tensor>> per_sample;
        per_sample.reserve(by.size());
        std::vector<Tensor*> params;
        for (auto& [name, t] : m.named_params()) params.push_back(t);
        for (std::size_t s = 0; s < by.size(); ++s) {
          Graph g;
          MlpVars mv = mlp_leaves(g, m);
          Tensor xrow({1, ds.dim()});
          for (std::int64_t c = 0; c < ds.dim(); ++c) xrow[c] = bx[static_cast<std::int64_t>(s) * ds.dim() + c];
          Var loss = detail_train::batch_loss(g, mv, mlp_logits(mv, g.input(xrow)),
                                              {by[s]}, cfg, def, nullptr);
          g.backward(loss);
          std::vector<Tensor> grads;
          for (auto& [name, t] : m.named_params()) grads.push_back(g.leaf_grad(name));
          per_sample.push_back(std::move(grads));
        }
        Rng noise = substream(cfg.seed, cfg.stream_label + "/dp-noise", epoch, step);
        defense::dp_sgd_step(params, per_sample, def.clip_norm, def.sigma, def.dp_lr, noise);
      } else if (adv) {
        Rng pool_rng = substream(cfg.seed, cfg.stream_label + "/adv-pool", epoch, step);
        std::vector<int> pool_idx;
        pool_idx.reserve(by.size());
        for (std::size_t i = 0; i < by.size(); ++i)
          pool_idx.push_back(val_idx[static_cast<std::size_t>(pool_rng.below(val_idx.size()))]);
        defense::adv_fine_tune_step(m, opt, cfg.lr, def.weight_decay, surrogate, surrogate_opt,
                                    bx, by, ds.rows(pool_idx), ds.labels_of(pool_idx), def.alpha);
      } else {
        Graph g;
        MlpVars mv = mlp_leaves(g, m);
        Rng ppb_rng = substream(cfg.seed, cfg.stream_label + "/ppb-pairs", epoch, step);
        Var loss = detail_train::batch_loss(g, mv, mlp_logits(mv, g.input(bx)), by, cfg, def,
                                            &ppb_rng);
        g.backward(loss);
        detail_train::adam_from_graph(m, g, opt, cfg.lr);
      }
      if (mask) prune::apply_mask_inplace(m, *mask);
    }
    report.epochs_run = epoch + 1;
    if (!val_idx.empty()) {
      const double vloss = eval_ce(m, val_x, val_y);
      if (defense::early_stopping_update(stop, vloss, m, def.patience)) break;
    }
  }
  if (stop.has_snapshot) {
    m = stop.best_params;
    report.best_val_loss = stop.best_val_loss;
  }
  return report;
}

}  // namespace prunemia::train
