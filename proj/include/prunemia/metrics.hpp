#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/data.hpp"
#include "prunemia/mlp.hpp"
#include "prunemia/rng.hpp"

namespace prunemia::metrics {

// Black-box sensitivity estimator settings. Noise vectors are standard normal
// draws keyed by (seed, noise_label, sample_id, i), so member/non-member
// comparisons reuse identical draws per sample across models and runs.
struct SensitivityConfig {
  int n = 10;
  double eps = 1e-3;
  std::uint64_t seed = 0;
  std::string noise_label = "ps-noise";

  void validate() const {
    if (n < 1) throw std::invalid_argument("SensitivityConfig: query budget must be >= 1");
    if (!(eps > 0)) throw std::invalid_argument("SensitivityConfig: eps must be positive");
  }
};

// PS_c = (1/n) * sum_i |f(x + eps * delta_i)_c - f(x)_c| / eps, evaluated with
// one forward call per query so the estimate is a pure function of
// (model, x, seed, sample_id).
template <typename ForwardFn>
Tensor prediction_sensitivity_fn(ForwardFn&& forward, const Tensor& x_row,
                                 const SensitivityConfig& cfg, std::uint64_t sample_id) {
  cfg.validate();
  const std::int64_t d = x_row.numel();
  Tensor x = x_row.reshaped({1, d});
  Tensor base = forward(x);
  const std::int64_t k = base.numel();
  Tensor ps({k});
  for (int i = 0; i < cfg.n; ++i) {
    Rng noise = substream(cfg.seed, cfg.noise_label, sample_id, static_cast<std::uint64_t>(i));
    Tensor xp = x;
    for (std::int64_t j = 0; j < d; ++j) xp[j] += cfg.eps * noise.normal();
    Tensor p = forward(xp);
    for (std::int64_t c = 0; c < k; ++c) ps[c] += std::fabs(p[c] - base[c]) / cfg.eps;
  }
  for (std::int64_t c = 0; c < k; ++c) ps[c] /= static_cast<double>(cfg.n);
  return ps;
}

inline Tensor prediction_sensitivity(const MlpModel& m, const Tensor& x_row,
                                     const SensitivityConfig& cfg, std::uint64_t sample_id) {
  return prediction_sensitivity_fn([&m](const Tensor& x) { return mlp_posterior(m, x); }, x_row,
                                   cfg, sample_id);
}

struct GapValue {
  double gap = 0.0;
  std::vector<double> per_class;
};

namespace detail_metrics {

struct SideStats {
  std::vector<double> sum;   // per class
  std::vector<double> cnt;
  double total_sum = 0.0;
  double total_cnt = 0.0;
};

inline GapValue finish_gap(const SideStats& mem, const SideStats& non, std::int64_t num_classes) {
  GapValue out;
  out.gap = mem.total_sum / mem.total_cnt - non.total_sum / non.total_cnt;
  out.per_class.assign(static_cast<std::size_t>(num_classes), 0.0);
  for (std::int64_t c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (mem.cnt[ci] > 0 && non.cnt[ci] > 0)
      out.per_class[ci] = mem.sum[ci] / mem.cnt[ci] - non.sum[ci] / non.cnt[ci];
  }
  return out;
}

}  // namespace detail_metrics

// Mean ground-truth-class confidence of members minus that of non-members.
inline GapValue confidence_gap(const MlpModel& m, const data::Dataset& ds,
                               const std::vector<int>& members,
                               const std::vector<int>& non_members) {
  if (members.empty() || non_members.empty())
    throw std::invalid_argument("confidence_gap: member and non-member sets must be non-empty");
  const std::int64_t k = m.spec.num_classes;
  detail_metrics::SideStats stats[2];
  const std::vector<int>* sets[2] = {&members, &non_members};
  for (int side = 0; side < 2; ++side) {
    auto& st = stats[side];
    st.sum.assign(static_cast<std::size_t>(k), 0.0);
    st.cnt.assign(static_cast<std::size_t>(k), 0.0);
    Tensor post = mlp_posterior(m, ds.rows(*sets[side]));
    for (std::size_t i = 0; i < sets[side]->size(); ++i) {
      const int y = ds.labels[static_cast<std::size_t>((*sets[side])[i])];
      const double conf = post[static_cast<std::int64_t>(i) * k + y];
      st.sum[static_cast<std::size_t>(y)] += conf;
      st.cnt[static_cast<std::size_t>(y)] += 1.0;
      st.total_sum += conf;
      st.total_cnt += 1.0;
    }
  }
  return detail_metrics::finish_gap(stats[0], stats[1], k);
}

// Same as confidence_gap but over the ground-truth-class prediction
// sensitivity. Sample ids are the dataset row indices.
inline GapValue sensitivity_gap(const MlpModel& m, const data::Dataset& ds,
                                const std::vector<int>& members,
                                const std::vector<int>& non_members,
                                const SensitivityConfig& cfg) {
  if (members.empty() || non_members.empty())
    throw std::invalid_argument("sensitivity_gap: member and non-member sets must be non-empty");
  const std::int64_t k = m.spec.num_classes;
  const std::int64_t d = ds.dim();
  detail_metrics::SideStats stats[2];
  const std::vector<int>* sets[2] = {&members, &non_members};
  for (int side = 0; side < 2; ++side) {
    auto& st = stats[side];
    st.sum.assign(static_cast<std::size_t>(k), 0.0);
    st.cnt.assign(static_cast<std::size_t>(k), 0.0);
    for (int idx : *sets[side]) {
      Tensor xrow({d});
      for (std::int64_t c = 0; c < d; ++c) xrow[c] = ds.features[idx * d + c];
      Tensor ps = prediction_sensitivity(m, xrow, cfg, static_cast<std::uint64_t>(idx));
      const int y = ds.labels[static_cast<std::size_t>(idx)];
      st.sum[static_cast<std::size_t>(y)] += ps[y];
      st.cnt[static_cast<std::size_t>(y)] += 1.0;
      st.total_sum += ps[y];
      st.total_cnt += 1.0;
    }
  }
  return detail_metrics::finish_gap(stats[0], stats[1], k);
}

// Training accuracy minus test accuracy (both as fractions).
inline double generalization_gap(const MlpModel& m, const data::Dataset& ds,
                                 const std::vector<int>& train_idx,
                                 const std::vector<int>& test_idx) {
  if (train_idx.empty() || test_idx.empty())
    throw std::invalid_argument("generalization_gap: sets must be non-empty");
  const double a = accuracy(m, ds.rows(train_idx), ds.labels_of(train_idx));
  const double b = accuracy(m, ds.rows(test_idx), ds.labels_of(test_idx));
  return a - b;
}

struct GapReport {
  double confidence_gap = 0.0;
  double sensitivity_gap = 0.0;
  double generalization_gap = 0.0;
  std::vector<double> per_class_confidence_gap;
  std::vector<double> per_class_sensitivity_gap;
};

inline GapReport gap_report(const MlpModel& m, const data::Dataset& ds,
                            const std::vector<int>& members, const std::vector<int>& non_members,
                            const SensitivityConfig& cfg) {
  GapReport r;
  GapValue c = confidence_gap(m, ds, members, non_members);
  GapValue s = sensitivity_gap(m, ds, members, non_members, cfg);
  r.confidence_gap = c.gap;
  r.sensitivity_gap = s.gap;
  r.per_class_confidence_gap = std::move(c.per_class);
  r.per_class_sensitivity_gap = std::move(s.per_class);
  r.generalization_gap = generalization_gap(m, ds, members, non_members);
  return r;
}

}  // namespace prunemia::metrics
