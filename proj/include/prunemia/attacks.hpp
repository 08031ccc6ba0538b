#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "prunemia/attention.hpp"
#include "prunemia/metrics.hpp"
#include "prunemia/pruning.hpp"

namespace prunemia::attacks {

// One attack-model input row: the target/shadow model's posterior, the
// prediction-sensitivity vector, the ground-truth class, and membership truth.
struct FeatureRow {
  std::vector<double> posterior;
  std::vector<double> sensitivity;  // empty when extraction skipped it
  int label = 0;
  bool is_member = false;
};

struct AttackDataset {
  std::int64_t num_classes = 0;
  std::vector<FeatureRow> rows;

  bool has_sensitivity() const {
    for (const auto& r : rows)
      if (r.sensitivity.empty()) return false;
    return !rows.empty();
  }
};

struct ExtractConfig {
  metrics::SensitivityConfig sensitivity;
  bool with_sensitivity = true;
};

// Queries the frozen model on the listed dataset rows. Sensitivity noise is
// keyed by the global dataset row index, so repeated extraction is
// bit-stable and both sides of a gap share per-sample draws.
inline void extract_features(AttackDataset& out, const MlpModel& model, const data::Dataset& ds,
                             const std::vector<int>& rows, bool member_flag,
                             const ExtractConfig& cfg) {
  const std::int64_t k = model.spec.num_classes;
  out.num_classes = k;
  Tensor post = mlp_posterior(model, ds.rows(rows));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    FeatureRow r;
    r.label = ds.labels[static_cast<std::size_t>(rows[i])];
    r.is_member = member_flag;
    r.posterior.resize(static_cast<std::size_t>(k));
    for (std::int64_t c = 0; c < k; ++c)
      r.posterior[static_cast<std::size_t>(c)] = post[static_cast<std::int64_t>(i) * k + c];
    if (cfg.with_sensitivity) {
      Tensor xrow({ds.dim()});
      for (std::int64_t c = 0; c < ds.dim(); ++c) xrow[c] = ds.features[rows[i] * ds.dim() + c];
      Tensor ps = metrics::prediction_sensitivity(model, xrow, cfg.sensitivity,
                                                  static_cast<std::uint64_t>(rows[i]));
      r.sensitivity.assign(ps.data(), ps.data() + k);
    }
    out.rows.push_back(std::move(r));
  }
}

inline AttackDataset extract_features(const MlpModel& model, const data::Dataset& ds,
                                      const std::vector<int>& members,
                                      const std::vector<int>& non_members,
                                      const ExtractConfig& cfg) {
  AttackDataset out;
  extract_features(out, model, ds, members, true, cfg);
  extract_features(out, model, ds, non_members, false, cfg);
  return out;
}

// ---- per-sample membership metrics -------------------------------------------

namespace detail_attacks {
inline double clamp_p(double p) { return std::min(std::max(p, 1e-12), 1.0 - 1e-12); }
}  // namespace detail_attacks

inline double xent(const std::vector<double>& posterior, int y) {
  if (y < 0 || y >= static_cast<int>(posterior.size()))
    throw std::invalid_argument("xent: label out of range");
  return -std::log(detail_attacks::clamp_p(posterior[static_cast<std::size_t>(y)]));
}

// Modified entropy: -(1 - p_y) log p_y - sum_{t != y} p_t log(1 - p_t).
inline double mentr(const std::vector<double>& posterior, int y) {
  if (y < 0 || y >= static_cast<int>(posterior.size()))
    throw std::invalid_argument("mentr: label out of range");
  double m = 0.0;
  for (std::size_t t = 0; t < posterior.size(); ++t) {
    const double p = detail_attacks::clamp_p(posterior[t]);
    if (static_cast<int>(t) == y)
      m -= (1.0 - p) * std::log(p);
    else
      m -= p * std::log(1.0 - p);
  }
  return m;
}

// ---- attack results ------------------------------------------------------------

struct AttackResult {
  double accuracy = 0.0;
  double auc = 0.0;
  std::vector<int> predictions;  // 1 = member
  std::vector<double> scores;    // higher = more member-like; empty for hard labels
};

// AUC via the rank statistic (average ranks on ties). With no scores the hard
// labels act as two-valued scores.
inline AttackResult evaluate_attack(const std::vector<int>& predictions,
                                    const std::vector<double>& scores,
                                    const std::vector<char>& truth) {
  if (predictions.size() != truth.size())
    throw std::invalid_argument("evaluate_attack: prediction/truth length mismatch");
  if (!scores.empty() && scores.size() != truth.size())
    throw std::invalid_argument("evaluate_attack: score/truth length mismatch");
  AttackResult res;
  res.predictions = predictions;
  res.scores = scores;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if ((predictions[i] != 0) == (truth[i] != 0)) ++correct;
  res.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());

  std::vector<double> s;
  if (!scores.empty()) {
    s = scores;
  } else {
    s.reserve(predictions.size());
    for (int p : predictions) s.push_back(static_cast<double>(p));
  }
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  std::vector<double> rank(s.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && s[order[j + 1]] == s[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double pos_ranks = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (truth[t]) {
      pos_ranks += rank[t];
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos > 0 && n_neg > 0)
    res.auc = (pos_ranks - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
              (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  else
    res.auc = 0.5;
  return res;
}

// Relative attack-accuracy drop when the adversary misassumes the target's
// pruning configuration.
inline double attack_accuracy_loss(double acc_known, double acc_unknown) {
  if (acc_known <= 0) throw std::invalid_argument("attack_accuracy_loss: acc_known must be > 0");
  return (acc_known - acc_unknown) / acc_known;
}

// ---- threshold attacks -----------------------------------------------------

enum class ThresholdKind { Conf, Xent, Mentr, Top1Conf };

inline const char* threshold_kind_name(ThresholdKind k) {
  switch (k) {
    case ThresholdKind::Conf: return "conf";
    case ThresholdKind::Xent: return "xent";
    case ThresholdKind::Mentr: return "mentr";
    case ThresholdKind::Top1Conf: return "top1conf";
  }
  return "?";
}

inline double threshold_metric(ThresholdKind kind, const FeatureRow& row) {
  switch (kind) {
    case ThresholdKind::Conf: return row.posterior[static_cast<std::size_t>(row.label)];
    case ThresholdKind::Xent: return xent(row.posterior, row.label);
    case ThresholdKind::Mentr: return mentr(row.posterior, row.label);
    case ThresholdKind::Top1Conf: return *std::max_element(row.posterior.begin(), row.posterior.end());
  }
  return 0.0;
}

// Learned decision rule for one class: member iff metric >= zeta (or <=).
struct ThresholdEntry {
  double zeta = 0.0;
  bool geq = true;
  double balanced_accuracy = 0.5;
};

struct ThresholdTable {
  ThresholdKind kind = ThresholdKind::Conf;
  std::int64_t num_classes = 0;
  std::map<int, ThresholdEntry> per_class;
  ThresholdEntry global;

  const ThresholdEntry& entry_for(int label) const {
    if (kind == ThresholdKind::Top1Conf) return global;
    auto it = per_class.find(label);
    return it == per_class.end() ? global : it->second;
  }
};

namespace detail_attacks {

// Sweeps all midpoints between consecutive distinct values plus +/- infinity,
// both directions, maximizing balanced accuracy. Ties prefer the smaller
// threshold, then direction >=.
inline ThresholdEntry sweep_threshold(std::vector<std::pair<double, bool>> samples) {
  const double inf = std::numeric_limits<double>::infinity();
  double n_pos = 0, n_neg = 0;
  for (const auto& [v, m] : samples) (m ? n_pos : n_neg) += 1.0;
  std::sort(samples.begin(), samples.end());
  std::vector<double> candidates{-inf};
  for (std::size_t i = 0; i + 1 < samples.size(); ++i)
    if (samples[i].first != samples[i + 1].first)
      candidates.push_back((samples[i].first + samples[i + 1].first) / 2.0);
  candidates.push_back(inf);

  ThresholdEntry best;
  best.balanced_accuracy = -1.0;
  for (double zeta : candidates) {
    // counts above/below the cut; samples sorted so a single pass would do,
    // but n is small enough that clarity wins
    double pos_geq = 0, neg_geq = 0;
    for (const auto& [v, m] : samples)
      if (v >= zeta) (m ? pos_geq : neg_geq) += 1.0;
    for (bool geq : {true, false}) {
      const double tpr = n_pos > 0 ? (geq ? pos_geq : n_pos - pos_geq) / n_pos : 0.0;
      const double tnr = n_neg > 0 ? (geq ? n_neg - neg_geq : neg_geq) / n_neg : 0.0;
      const double bal = 0.5 * (tpr + tnr);
      const bool better = bal > best.balanced_accuracy + 1e-15;
      const bool tie = std::fabs(bal - best.balanced_accuracy) <= 1e-15;
      const bool tie_preferred =
          tie && (zeta < best.zeta || (zeta == best.zeta && geq && !best.geq));
      if (better || tie_preferred) {
        best.zeta = zeta;
        best.geq = geq;
        best.balanced_accuracy = bal;
      }
    }
  }
  return best;
}

}  // namespace detail_attacks

// Learns per-class thresholds from shadow features; classes with fewer than
// two shadow samples (or a single-sided class) fall back to the global entry.
inline ThresholdTable learn_thresholds(const AttackDataset& shadow, ThresholdKind kind) {
  if (shadow.rows.empty()) throw std::invalid_argument("learn_thresholds: empty shadow data");
  ThresholdTable table;
  table.kind = kind;
  table.num_classes = shadow.num_classes;
  std::vector<std::pair<double, bool>> all;
  std::map<int, std::vector<std::pair<double, bool>>> by_class;
  for (const auto& row : shadow.rows) {
    const double v = threshold_metric(kind, row);
    all.emplace_back(v, row.is_member);
    by_class[row.label].emplace_back(v, row.is_member);
  }
  table.global = detail_attacks::sweep_threshold(all);
  if (kind == ThresholdKind::Top1Conf) return table;
  for (auto& [label, samples] : by_class) {
    if (samples.size() < 2) continue;
    bool has_pos = false, has_neg = false;
    for (const auto& [v, m] : samples) (m ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) continue;
    table.per_class[label] = detail_attacks::sweep_threshold(std::move(samples));
  }
  return table;
}

inline AttackResult threshold_attack(ThresholdKind kind, const ThresholdTable& table,
                                     const AttackDataset& target) {
  if (table.num_classes != target.num_classes)
    throw std::invalid_argument("threshold_attack: class count mismatch between table and target");
  std::vector<int> preds;
  std::vector<double> scores;
  std::vector<char> truth;
  preds.reserve(target.rows.size());
  for (const auto& row : target.rows) {
    const double v = threshold_metric(kind, row);
    const ThresholdEntry& e = table.entry_for(row.label);
    const bool member = e.geq ? v >= e.zeta : v <= e.zeta;
    preds.push_back(member ? 1 : 0);
    // signed margin to the class's own threshold keeps scores comparable
    // across classes with different directions
    const double margin = e.geq ? v - e.zeta : e.zeta - v;
    scores.push_back(std::isfinite(margin) ? margin : (margin > 0 ? 1e300 : -1e300));
    truth.push_back(row.is_member ? 1 : 0);
  }
  return evaluate_attack(preds, scores, truth);
}

// ---- neural-network attacks ---------------------------------------------------

enum class NnKind { NN, Top3NN, NNCls };

inline const char* nn_kind_name(NnKind k) {
  switch (k) {
    case NnKind::NN: return "nn";
    case NnKind::Top3NN: return "top3nn";
    case NnKind::NNCls: return "nncls";
  }
  return "?";
}

inline std::vector<double> nn_feature_map(NnKind kind, const FeatureRow& row,
                                          std::int64_t num_classes) {
  switch (kind) {
    case NnKind::NN: return row.posterior;
    case NnKind::Top3NN: {
      std::vector<double> sorted = row.posterior;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      sorted.resize(3, 0.0);
      return sorted;
    }
    case NnKind::NNCls: {
      std::vector<double> f = row.posterior;
      f.resize(static_cast<std::size_t>(2 * num_classes), 0.0);
      f[static_cast<std::size_t>(num_classes + row.label)] = 1.0;
      return f;
    }
  }
  return {};
}

// Shared schedule for every learned attack model (SGD, step decay at 1/2 and
// 3/4 of the budget).
struct AttackTrainConfig {
  int epochs = 100;
  int batch_size = 128;
  double base_lr = 0.01;
  double momentum = 0.0;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  std::string label = "attack";
};

namespace detail_attacks {

inline Var binary_mlp_logits(Graph& g, const MlpVars& v, Var x, double drop, Rng& rng,
                             bool training) {
  Var h = x;
  const std::size_t L = v.w.size();
  for (std::size_t l = 0; l + 1 < L; ++l) {
    h = relu(linear(h, v.w[l], v.b[l]));
    h = dropout(h, drop, rng, training);
  }
  return linear(h, v.w[L - 1], v.b[L - 1]);
}

inline void sgd_from_graph(MlpModel& m, Graph& g, SgdState& st, double lr) {
  std::vector<Tensor*> params;
  std::vector<Tensor> grads;
  for (auto& [name, t] : m.named_params()) {
    params.push_back(t);
    grads.push_back(g.leaf_grad(name));
  }
  std::vector<const Tensor*> gp;
  for (auto& t : grads) gp.push_back(&t);
  sgd_step(params, gp, st, lr);
}

}  // namespace detail_attacks

// Trains the binary attack classifier (feature map per kind) on shadow rows
// and classifies the target rows.
inline AttackResult nn_attack(NnKind kind, const AttackDataset& shadow, const AttackDataset& target,
                              const AttackTrainConfig& cfg) {
  if (shadow.rows.empty() || target.rows.empty())
    throw std::invalid_argument("nn_attack: empty shadow or target dataset");
  const std::int64_t K = shadow.num_classes;
  const std::int64_t in_dim =
      static_cast<std::int64_t>(nn_feature_map(kind, shadow.rows[0], K).size());
  if (static_cast<std::int64_t>(nn_feature_map(kind, target.rows[0], target.num_classes).size()) !=
      in_dim)
    throw std::invalid_argument("nn_attack: feature dimension mismatch between shadow and target");

  Rng init = substream(cfg.seed, cfg.label + "/init");
  MlpModel model = init_mlp(MlpSpec{in_dim, {128, 64}, 2}, false, init);

  Tensor X({static_cast<std::int64_t>(shadow.rows.size()), in_dim});
  std::vector<int> Y(shadow.rows.size());
  for (std::size_t i = 0; i < shadow.rows.size(); ++i) {
    const auto f = nn_feature_map(kind, shadow.rows[i], K);
    for (std::int64_t c = 0; c < in_dim; ++c)
      X[static_cast<std::int64_t>(i) * in_dim + c] = f[static_cast<std::size_t>(c)];
    Y[i] = shadow.rows[i].is_member ? 1 : 0;
  }

  SgdState opt;
  opt.momentum_coeff = cfg.momentum;
  std::vector<std::int64_t> order(shadow.rows.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_lr(epoch, cfg.base_lr, cfg.epochs);
    Rng shuffle_rng = substream(cfg.seed, cfg.label + "/shuffle", epoch);
    shuffle_rng.shuffle(order);
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::int64_t B = static_cast<std::int64_t>(end - start);
      Tensor bx({B, in_dim});
      std::vector<int> by(static_cast<std::size_t>(B));
      for (std::size_t i = start; i < end; ++i) {
        for (std::int64_t c = 0; c < in_dim; ++c)
          bx[static_cast<std::int64_t>(i - start) * in_dim + c] = X[order[i] * in_dim + c];
        by[i - start] = Y[static_cast<std::size_t>(order[i])];
      }
      Graph g;
      MlpVars mv = mlp_leaves(g, model);
      Rng drop = substream(cfg.seed, cfg.label + "/dropout", epoch, step);
      Var logits = detail_attacks::binary_mlp_logits(g, mv, g.input(bx), cfg.dropout, drop, true);
      g.backward(cross_entropy(logits, by));
      detail_attacks::sgd_from_graph(model, g, opt, lr);
    }
  }

  Tensor tx({static_cast<std::int64_t>(target.rows.size()), in_dim});
  std::vector<char> truth;
  for (std::size_t i = 0; i < target.rows.size(); ++i) {
    const auto f = nn_feature_map(kind, target.rows[i], target.num_classes);
    for (std::int64_t c = 0; c < in_dim; ++c)
      tx[static_cast<std::int64_t>(i) * in_dim + c] = f[static_cast<std::size_t>(c)];
    truth.push_back(target.rows[i].is_member ? 1 : 0);
  }
  Tensor post = mlp_posterior(model, tx);
  std::vector<int> preds;
  std::vector<double> scores;
  for (std::size_t i = 0; i < target.rows.size(); ++i) {
    const double pm = post[static_cast<std::int64_t>(i) * 2 + 1];
    preds.push_back(pm >= 0.5 ? 1 : 0);
    scores.push_back(pm);
  }
  return evaluate_attack(preds, scores, truth);
}

// ---- SAMIA ---------------------------------------------------------------------

inline AttackInputBatch attack_batch(const AttackDataset& ds,
                                     const std::vector<std::int64_t>& idx) {
  const std::int64_t K = ds.num_classes;
  const std::int64_t B = static_cast<std::int64_t>(idx.size());
  AttackInputBatch b;
  b.posterior = Tensor({B, K});
  b.sensitivity = Tensor({B, K});
  b.label_onehot = Tensor({B, K});
  for (std::int64_t i = 0; i < B; ++i) {
    const FeatureRow& r = ds.rows[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    for (std::int64_t c = 0; c < K; ++c) {
      b.posterior[i * K + c] = r.posterior[static_cast<std::size_t>(c)];
      b.sensitivity[i * K + c] = r.sensitivity[static_cast<std::size_t>(c)];
    }
    b.label_onehot[i * K + r.label] = 1.0;
  }
  return b;
}

// Trains the self-attention attack model on shadow rows and classifies the
// target rows by argmax of the membership posterior.
inline AttackResult samia_attack(const AttackDataset& shadow, const AttackDataset& target,
                                 const AttentionAttackSpec& spec, const AttackTrainConfig& cfg) {
  if (!shadow.has_sensitivity() || !target.has_sensitivity())
    throw std::invalid_argument("samia_attack: sensitivity features missing");
  if (shadow.num_classes != spec.num_classes || target.num_classes != spec.num_classes)
    throw std::invalid_argument("samia_attack: class count mismatch");
  Rng init = substream(cfg.seed, cfg.label + "/init");
  SamiaModel model = init_samia(spec, init);

  std::vector<std::int64_t> order(shadow.rows.size());
  std::iota(order.begin(), order.end(), 0);
  SgdState opt;
  opt.momentum_coeff = cfg.momentum;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_lr(epoch, cfg.base_lr, cfg.epochs);
    Rng shuffle_rng = substream(cfg.seed, cfg.label + "/shuffle", epoch);
    shuffle_rng.shuffle(order);
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::int64_t> bidx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      AttackInputBatch batch = attack_batch(shadow, bidx);
      std::vector<int> by;
      by.reserve(bidx.size());
      for (std::int64_t i : bidx)
        by.push_back(shadow.rows[static_cast<std::size_t>(i)].is_member ? 1 : 0);
      Graph g;
      SamiaVars v = samia_leaves(g, model);
      Rng drop = substream(cfg.seed, cfg.label + "/dropout", epoch, step);
      Var logits = samia_logits(g, v, spec, g.input(batch.posterior), g.input(batch.sensitivity),
                                g.input(batch.label_onehot), drop, /*training=*/true);
      g.backward(cross_entropy(logits, by));
      std::vector<Tensor*> params;
      std::vector<Tensor> grads;
      for (auto& [name, t] : model.named_params()) {
        params.push_back(t);
        grads.push_back(g.leaf_grad(name));
      }
      std::vector<const Tensor*> gp;
      for (auto& t : grads) gp.push_back(&t);
      sgd_step(params, gp, opt, lr);
    }
  }

  std::vector<std::int64_t> all(target.rows.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> preds;
  std::vector<double> scores;
  std::vector<char> truth;
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < all.size(); start += chunk) {
    const std::size_t end = std::min(all.size(), start + chunk);
    std::vector<std::int64_t> bidx(all.begin() + static_cast<std::ptrdiff_t>(start),
                                   all.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor post = samia_forward(model, attack_batch(target, bidx));
    for (std::size_t i = 0; i < bidx.size(); ++i) {
      const double pm = post[static_cast<std::int64_t>(i) * 2 + 1];
      preds.push_back(pm >= 0.5 ? 1 : 0);
      scores.push_back(pm);
    }
  }
  for (const auto& r : target.rows) truth.push_back(r.is_member ? 1 : 0);
  return evaluate_attack(preds, scores, truth);
}

// ---- BlindMI -------------------------------------------------------------------

struct BlindMiConfig {
  int probe_budget = 200;
  int max_rounds = 20;
  std::uint64_t seed = 0;
  std::string label = "blindmi";
};

using PointSet = std::vector<std::vector<double>>;

// Median of pairwise squared distances over all points; 1.0 when degenerate.
inline double median_sq_distance(const PointSet& pts) {
  std::vector<double> d2s;
  const std::size_t n = pts.size();
  d2s.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < pts[i].size(); ++c) {
        const double diff = pts[i][c] - pts[j][c];
        s += diff * diff;
      }
      d2s.push_back(s);
    }
  if (d2s.empty()) return 1.0;
  std::nth_element(d2s.begin(), d2s.begin() + static_cast<std::ptrdiff_t>(d2s.size() / 2),
                   d2s.end());
  const double med = d2s[d2s.size() / 2];
  return med > 0 ? med : 1.0;
}

// Biased (V-statistic) squared MMD with the Gaussian kernel
// k(a, b) = exp(-||a-b||^2 / bandwidth).
inline double gaussian_mmd2(const PointSet& a, const PointSet& b, double bandwidth) {
  if (a.empty() || b.empty()) throw std::invalid_argument("gaussian_mmd2: empty set");
  auto ksum = [bandwidth](const PointSet& x, const PointSet& y) {
    double s = 0.0;
    for (const auto& xi : x)
      for (const auto& yj : y) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < xi.size(); ++c) d2 += (xi[c] - yj[c]) * (xi[c] - yj[c]);
        s += std::exp(-d2 / bandwidth);
      }
    return s;
  };
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  return ksum(a, a) / (na * na) + ksum(b, b) / (nb * nb) - 2.0 * ksum(a, b) / (na * nb);
}

// The differential move loop: starting from all candidates in the member set
// and `reference` as the non-member set, a candidate moves to the non-member
// side iff the move strictly increases the kernel MMD between the evolving
// sets. Runs to a fixed point or max_rounds. Returns per-candidate member
// flags.
inline std::vector<char> blindmi_moves(const PointSet& candidates, const PointSet& reference,
                                       int max_rounds) {
  const std::size_t n_cand = candidates.size();
  if (n_cand == 0 || reference.empty())
    throw std::invalid_argument("blindmi_moves: empty candidate or reference set");
  PointSet all = candidates;
  all.insert(all.end(), reference.begin(), reference.end());
  const std::size_t n_all = all.size();
  const double bandwidth = median_sq_distance(all);

  std::vector<double> kernel(n_all * n_all);
  for (std::size_t i = 0; i < n_all; ++i) {
    kernel[i * n_all + i] = 1.0;
    for (std::size_t j = i + 1; j < n_all; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < all[i].size(); ++c)
        d2 += (all[i][c] - all[j][c]) * (all[i][c] - all[j][c]);
      const double kv = std::exp(-d2 / bandwidth);
      kernel[i * n_all + j] = kv;
      kernel[j * n_all + i] = kv;
    }
  }

  std::vector<char> member(n_all, 0);
  for (std::size_t i = 0; i < n_cand; ++i) member[i] = 1;
  double s_mm = 0, s_nn = 0, s_mn = 0;
  for (std::size_t i = 0; i < n_all; ++i)
    for (std::size_t j = 0; j < n_all; ++j) {
      const double kv = kernel[i * n_all + j];
      if (member[i] && member[j])
        s_mm += kv;
      else if (!member[i] && !member[j])
        s_nn += kv;
      else if (member[i] && !member[j])
        s_mn += kv;
    }
  std::size_t n_m = n_cand, n_n = reference.size();

  auto mmd2 = [](double smm, double snn, double smn, double nm, double nn) {
    return smm / (nm * nm) + snn / (nn * nn) - 2.0 * smn / (nm * nn);
  };

  for (int round = 0; round < max_rounds; ++round) {
    bool changed = false;
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (!member[c] || n_m <= 1) continue;
      double r_m = 0, r_n = 0;
      for (std::size_t j = 0; j < n_all; ++j) {
        if (member[j])
          r_m += kernel[c * n_all + j];
        else
          r_n += kernel[c * n_all + j];
      }
      const double before =
          mmd2(s_mm, s_nn, s_mn, static_cast<double>(n_m), static_cast<double>(n_n));
      const double s_mm2 = s_mm - 2.0 * r_m + 1.0;
      const double s_nn2 = s_nn + 2.0 * r_n + 1.0;
      const double s_mn2 = s_mn - r_n + (r_m - 1.0);
      const double after =
          mmd2(s_mm2, s_nn2, s_mn2, static_cast<double>(n_m - 1), static_cast<double>(n_n + 1));
      if (after > before) {
        member[c] = 0;
        s_mm = s_mm2;
        s_nn = s_nn2;
        s_mn = s_mn2;
        --n_m;
        ++n_n;
        changed = true;
      }
    }
    if (!changed) break;
  }
  member.resize(n_cand);
  return member;
}

// Differential BlindMI against a queryable model: the reference non-member
// posteriors come from probing the model with uniform random feature vectors
// drawn inside the candidates' observed per-feature range.
inline AttackResult blindmi_attack(const MlpModel& model, const Tensor& candidate_features,
                                   const AttackDataset& target, const BlindMiConfig& cfg) {
  const std::size_t n_cand = target.rows.size();
  if (n_cand == 0) throw std::invalid_argument("blindmi_attack: no candidates");
  if (cfg.probe_budget < 1)
    throw std::invalid_argument("blindmi_attack: probe budget must be >= 1");
  const std::int64_t d = candidate_features.last_dim();
  const std::int64_t K = target.num_classes;

  Tensor lo({d}), hi({d});
  for (std::int64_t c = 0; c < d; ++c) {
    double mn = candidate_features[c], mx = candidate_features[c];
    for (std::int64_t r = 1; r < candidate_features.dim(0); ++r) {
      mn = std::min(mn, candidate_features[r * d + c]);
      mx = std::max(mx, candidate_features[r * d + c]);
    }
    lo[c] = mn;
    hi[c] = mx;
  }
  Rng probe_rng = substream(cfg.seed, cfg.label + "/probes");
  Tensor probes({cfg.probe_budget, d});
  for (std::int64_t r = 0; r < cfg.probe_budget; ++r)
    for (std::int64_t c = 0; c < d; ++c) probes[r * d + c] = probe_rng.uniform(lo[c], hi[c]);
  Tensor probe_post = mlp_posterior(model, probes);

  PointSet candidates(n_cand);
  for (std::size_t i = 0; i < n_cand; ++i) candidates[i] = target.rows[i].posterior;
  PointSet reference(static_cast<std::size_t>(cfg.probe_budget),
                     std::vector<double>(static_cast<std::size_t>(K)));
  for (int r = 0; r < cfg.probe_budget; ++r)
    for (std::int64_t c = 0; c < K; ++c)
      reference[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = probe_post[r * K + c];

  std::vector<char> member = blindmi_moves(candidates, reference, cfg.max_rounds);
  std::vector<int> preds;
  std::vector<char> truth;
  for (std::size_t i = 0; i < n_cand; ++i) {
    preds.push_back(member[i] ? 1 : 0);
    truth.push_back(target.rows[i].is_member ? 1 : 0);
  }
  return evaluate_attack(preds, {}, truth);
}

// ---- shadow ensemble -------------------------------------------------------

// One adversary-side replica: original shadow model, its pruned counterpart,
// and the shadow's member/non-member ground truth.
struct ShadowEntry {
  MlpModel original;
  prune::PrunedModel pruned;
  std::vector<int> member_idx;
  std::vector<int> non_member_idx;
  std::vector<int> val_idx;
};

struct ShadowEnsemble {
  std::vector<ShadowEntry> shadows;
};

struct ShadowConfig {
  int count = 5;
  MlpSpec spec;  // input_dim/num_classes filled from the data by the caller
  prune::PruneMethod method = prune::PruneMethod::L1Unstructured;
  double gamma = 0.5;
  defense::DefenseConfig fine_tune_defense;  // Basic unless the attack is adaptive
  defense::DefenseConfig original_defense;   // Basic with the shared budgets
  data::SplitSpec split_spec;
  double lr = 1e-3;
  int batch_size = 128;
  double slim_l1 = 1e-4;
  std::uint64_t seed = 0;

  std::string id() const {
    return std::string(prune::method_name(method)) + "-g" + std::to_string(gamma) + "-" +
           fine_tune_defense.id();
  }
};

// Trains `count` shadow (original, pruned) pairs on re-drawn splits of the
// shadow half, imitating the adversary's assumed target configuration.
inline ShadowEnsemble build_shadow_ensemble(const data::Dataset& ds,
                                            const std::vector<int>& shadow_half,
                                            const ShadowConfig& cfg) {
  if (cfg.count < 1) throw std::invalid_argument("build_shadow_ensemble: count must be >= 1");
  if (shadow_half.size() < 20)
    throw std::invalid_argument("build_shadow_ensemble: shadow half too small to resample");
  const bool slimming = cfg.method == prune::PruneMethod::Slimming;
  ShadowEnsemble ens;
  for (int i = 0; i < cfg.count; ++i) {
    ShadowEntry entry;
    data::HalfSplit split = data::resplit(
        shadow_half, cfg.split_spec, cfg.seed, 1000 + static_cast<std::uint64_t>(i));
    Rng init = substream(cfg.seed, "shadow-orig-init", static_cast<std::uint64_t>(i),
                         static_cast<std::uint64_t>(slimming));
    entry.original = init_mlp(cfg.spec, slimming, init);
    train::TrainConfig tc;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.slim_l1 = slimming ? cfg.slim_l1 : 0.0;
    tc.seed = cfg.seed;
    tc.stream_label = "shadow-orig/" + std::to_string(i) + (slimming ? "/slim" : "");
    train::train_mlp(entry.original, ds, split.train, split.val, tc, cfg.original_defense);

    train::TrainConfig ftc = tc;
    ftc.slim_l1 = 0.0;
    ftc.stream_label = "shadow-ft/" + std::to_string(i) + "/" + cfg.id();
    entry.pruned = prune::prune_pipeline(entry.original, cfg.method, cfg.gamma, ds, split.train,
                                         split.val, ftc, cfg.fine_tune_defense);
    entry.member_idx = split.train;
    entry.non_member_idx = split.test;
    entry.val_idx = split.val;
    ens.shadows.push_back(std::move(entry));
  }
  return ens;
}

// Balanced attack-training rows from every shadow, concatenated. `use_pruned`
// selects whether features come from the pruned or the original shadows.
inline AttackDataset shadow_attack_dataset(const ShadowEnsemble& ens, const data::Dataset& ds,
                                           bool use_pruned, const ExtractConfig& cfg) {
  AttackDataset out;
  for (const auto& entry : ens.shadows) {
    const std::size_t n =
        std::min(entry.member_idx.size(), entry.non_member_idx.size());
    std::vector<int> members(entry.member_idx.begin(),
                             entry.member_idx.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<int> non_members(entry.non_member_idx.begin(),
                                 entry.non_member_idx.begin() + static_cast<std::ptrdiff_t>(n));
    const MlpModel& model = use_pruned ? entry.pruned.model : entry.original;
    extract_features(out, model, ds, members, true, cfg);
    extract_features(out, model, ds, non_members, false, cfg);
  }
  return out;
}

// ---- CSV interchange ---------------------------------------------------------

// Header: is_member,label,p_0..p_{K-1},s_0..s_{K-1}
inline void save_attack_csv(const AttackDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data::CsvError("save_attack_csv: cannot open " + path);
  out << "is_member,label";
  for (std::int64_t c = 0; c < ds.num_classes; ++c) out << ",p_" << c;
  for (std::int64_t c = 0; c < ds.num_classes; ++c) out << ",s_" << c;
  out << "\n";
  out.precision(17);
  for (const auto& r : ds.rows) {
    out << (r.is_member ? 1 : 0) << ',' << r.label;
    for (std::int64_t c = 0; c < ds.num_classes; ++c) out << ',' << r.posterior[static_cast<std::size_t>(c)];
    for (std::int64_t c = 0; c < ds.num_classes; ++c)
      out << ',' << (r.sensitivity.empty() ? 0.0 : r.sensitivity[static_cast<std::size_t>(c)]);
    out << "\n";
  }
}

inline AttackDataset load_attack_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data::CsvError("load_attack_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw data::CsvError("load_attack_csv: " + path + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  if (header.size() < 4 || header[0] != "is_member" || header[1] != "label")
    throw data::CsvError("load_attack_csv: " + path + ":1: bad header");
  const std::int64_t k = static_cast<std::int64_t>((header.size() - 2) / 2);
  AttackDataset ds;
  ds.num_classes = k;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<std::int64_t>(vals.size()) != 2 + 2 * k)
      throw data::CsvError("load_attack_csv: " + path + ":" + std::to_string(line_no) +
                           ": wrong column count");
    FeatureRow r;
    r.is_member = vals[0] != 0.0;
    r.label = static_cast<int>(vals[1]);
    r.posterior.assign(vals.begin() + 2, vals.begin() + 2 + k);
    r.sensitivity.assign(vals.begin() + 2 + k, vals.end());
    ds.rows.push_back(std::move(r));
  }
  return ds;
}

}  // namespace prunemia::attacks
