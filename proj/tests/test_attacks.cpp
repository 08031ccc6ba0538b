#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "prunemia/attacks.hpp"

using namespace prunemia;
using namespace prunemia::attacks;

namespace {

FeatureRow make_row(std::vector<double> post, int label, bool member,
                    std::vector<double> sens = {}) {
  FeatureRow r;
  if (sens.empty()) sens.assign(post.size(), 0.0);
  r.posterior = std::move(post);
  r.sensitivity = std::move(sens);
  r.label = label;
  r.is_member = member;
  return r;
}

}  // namespace

TEST_CASE("xent and mentr formulas") {
  REQUIRE(xent({0.9, 0.1}, 0) == Catch::Approx(-std::log(0.9)).margin(1e-15));
  REQUIRE(xent({0.9, 0.1}, 0) == Catch::Approx(0.10536).margin(1e-5));
  REQUIRE(mentr({0.5, 0.5}, 0) == Catch::Approx(0.6931).margin(1e-4));
  // one-hot correct posterior: both metrics vanish after clamping
  REQUIRE(xent({1.0, 0.0}, 0) <= 1e-11);
  REQUIRE(mentr({1.0, 0.0}, 0) <= 1e-11);
  REQUIRE_THROWS_AS(xent({0.5, 0.5}, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(mentr({0.5, 0.5}, -1), std::invalid_argument);
}

TEST_CASE("xent and mentr match literal-formula oracles on random posteriors") {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const int k = 2 + static_cast<int>(rng.below(6));
    std::vector<double> p(static_cast<std::size_t>(k));
    double s = 0.0;
    for (auto& v : p) {
      v = rng.uniform() + 1e-3;
      s += v;
    }
    for (auto& v : p) v /= s;
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));

    auto clamp = [](double v) { return std::min(std::max(v, 1e-12), 1.0 - 1e-12); };
    const double expect_xent = -std::log(clamp(p[static_cast<std::size_t>(y)]));
    double expect_mentr = -(1.0 - clamp(p[static_cast<std::size_t>(y)])) *
                          std::log(clamp(p[static_cast<std::size_t>(y)]));
    for (int tcls = 0; tcls < k; ++tcls)
      if (tcls != y)
        expect_mentr -= clamp(p[static_cast<std::size_t>(tcls)]) *
                        std::log(1.0 - clamp(p[static_cast<std::size_t>(tcls)]));
    REQUIRE(xent(p, y) == Catch::Approx(expect_xent).margin(1e-12));
    REQUIRE(mentr(p, y) == Catch::Approx(expect_mentr).margin(1e-12));
  }
}

TEST_CASE("threshold learning on a separable instance") {
  AttackDataset shadow;
  shadow.num_classes = 2;
  shadow.rows = {make_row({0.9, 0.1}, 0, true), make_row({0.8, 0.2}, 0, true),
                 make_row({0.2, 0.8}, 0, false), make_row({0.1, 0.9}, 0, false)};
  ThresholdTable table = learn_thresholds(shadow, ThresholdKind::Conf);
  const ThresholdEntry& e = table.per_class.at(0);
  REQUIRE(e.balanced_accuracy == 1.0);
  REQUIRE(e.geq);
  REQUIRE(e.zeta == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("identical metric values yield chance accuracy") {
  AttackDataset shadow;
  shadow.num_classes = 2;
  for (int i = 0; i < 8; ++i) shadow.rows.push_back(make_row({0.7, 0.3}, 0, i % 2 == 0));
  ThresholdTable table = learn_thresholds(shadow, ThresholdKind::Conf);
  REQUIRE(table.per_class.at(0).balanced_accuracy == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("threshold sweep equals exhaustive brute force") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    AttackDataset shadow;
    shadow.num_classes = 2;
    std::vector<std::pair<double, bool>> samples;
    for (int i = 0; i < 40; ++i) {
      const bool member = rng.bernoulli(0.5);
      const double v = rng.uniform();
      samples.emplace_back(v, member);
      shadow.rows.push_back(make_row({v, 1.0 - v}, 0, member));
    }
    ThresholdTable table = learn_thresholds(shadow, ThresholdKind::Conf);

    // brute force over all candidate cuts and directions
    std::vector<double> values;
    for (auto& [v, m] : samples) values.push_back(v);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> cuts{-std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i + 1 < values.size(); ++i)
      cuts.push_back((values[i] + values[i + 1]) / 2.0);
    double best = -1.0;
    for (double zeta : cuts) {
      for (bool geq : {true, false}) {
        double tp = 0, tn = 0, np = 0, nn = 0;
        for (auto& [v, m] : samples) {
          const bool pred = geq ? v >= zeta : v <= zeta;
          if (m) {
            np += 1;
            if (pred) tp += 1;
          } else {
            nn += 1;
            if (!pred) tn += 1;
          }
        }
        best = std::max(best, 0.5 * (tp / np + tn / nn));
      }
    }
    REQUIRE(table.per_class.at(0).balanced_accuracy == Catch::Approx(best).margin(1e-12));
  }
}

TEST_CASE("perfectly separating table reaches accuracy one") {
  AttackDataset shadow;
  shadow.num_classes = 2;
  shadow.rows = {make_row({0.9, 0.1}, 0, true), make_row({0.2, 0.8}, 0, false),
                 make_row({0.95, 0.05}, 1, true), make_row({0.3, 0.7}, 1, false)};
  ThresholdTable table = learn_thresholds(shadow, ThresholdKind::Conf);
  AttackResult res = threshold_attack(ThresholdKind::Conf, table, shadow);
  REQUIRE(res.accuracy == 1.0);
  REQUIRE(res.auc == 1.0);
}

TEST_CASE("threshold attack is invariant under monotone metric transforms") {
  Rng rng(11);
  AttackDataset shadow, target;
  shadow.num_classes = target.num_classes = 2;
  for (int i = 0; i < 60; ++i) {
    const bool member = rng.bernoulli(0.5);
    const double v = member ? rng.uniform(0.3, 1.0) : rng.uniform(0.0, 0.7);
    shadow.rows.push_back(make_row({v, 1.0 - v}, 0, member));
  }
  for (int i = 0; i < 40; ++i) {
    const bool member = rng.bernoulli(0.5);
    const double v = rng.uniform();
    target.rows.push_back(make_row({v, 1.0 - v}, 0, member));
  }
  ThresholdTable t1 = learn_thresholds(shadow, ThresholdKind::Conf);
  AttackResult r1 = threshold_attack(ThresholdKind::Conf, t1, target);

  auto transform = [](AttackDataset ds) {
    for (auto& row : ds.rows) row.posterior[0] = std::exp(3.0 * row.posterior[0]);
    return ds;
  };
  AttackDataset shadow_t = transform(shadow);
  AttackDataset target_t = transform(target);
  ThresholdTable t2 = learn_thresholds(shadow_t, ThresholdKind::Conf);
  AttackResult r2 = threshold_attack(ThresholdKind::Conf, t2, target_t);
  REQUIRE(r1.predictions == r2.predictions);
}

TEST_CASE("top1conf uses a single global threshold") {
  AttackDataset shadow;
  shadow.num_classes = 3;
  shadow.rows = {make_row({0.8, 0.1, 0.1}, 0, true), make_row({0.4, 0.3, 0.3}, 1, false),
                 make_row({0.1, 0.7, 0.2}, 1, true), make_row({0.34, 0.33, 0.33}, 2, false)};
  ThresholdTable table = learn_thresholds(shadow, ThresholdKind::Top1Conf);
  REQUIRE(table.per_class.empty());
  REQUIRE(table.global.balanced_accuracy == 1.0);
}

TEST_CASE("nn attack feature maps") {
  FeatureRow row = make_row({0.1, 0.7, 0.2}, 2, true);
  REQUIRE(nn_feature_map(NnKind::NN, row, 3) == std::vector<double>{0.1, 0.7, 0.2});
  REQUIRE(nn_feature_map(NnKind::Top3NN, row, 3) == std::vector<double>{0.7, 0.2, 0.1});
  const auto cls = nn_feature_map(NnKind::NNCls, row, 3);
  REQUIRE(cls.size() == 6);
  REQUIRE(cls[5] == 1.0);  // one-hot of class 2 in the second half
  REQUIRE(cls[3] == 0.0);
}

TEST_CASE("nn attack on constant features is uninformative") {
  AttackDataset shadow, target;
  shadow.num_classes = target.num_classes = 2;
  for (int i = 0; i < 64; ++i) shadow.rows.push_back(make_row({0.5, 0.5}, 0, i % 2 == 0));
  for (int i = 0; i < 50; ++i) target.rows.push_back(make_row({0.5, 0.5}, 0, i % 2 == 0));
  AttackTrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 5;
  AttackResult res = nn_attack(NnKind::NN, shadow, target, cfg);
  REQUIRE(res.accuracy == Catch::Approx(0.5).margin(0.001));
}

TEST_CASE("evaluate_attack accuracy and auc") {
  REQUIRE(evaluate_attack({1, 0, 1}, {}, {1, 0, 1}).accuracy == 1.0);
  REQUIRE(evaluate_attack({1, 0, 1}, {0.9, 0.1, 0.8}, {1, 0, 1}).auc == 1.0);
  REQUIRE_THROWS_AS(evaluate_attack({1}, {}, {1, 0}), std::invalid_argument);

  // coin flips on balanced truth stay near one half
  Rng rng(13);
  std::vector<int> preds;
  std::vector<char> truth;
  for (int i = 0; i < 10000; ++i) {
    preds.push_back(rng.bernoulli(0.5) ? 1 : 0);
    truth.push_back(i % 2 == 0);
  }
  const double acc = evaluate_attack(preds, {}, truth).accuracy;
  REQUIRE(std::fabs(acc - 0.5) < 0.03);
}

TEST_CASE("attack accuracy loss") {
  REQUIRE(attack_accuracy_loss(0.8, 0.8) == 0.0);
  REQUIRE(attack_accuracy_loss(0.8, 0.76) == Catch::Approx(0.05).margin(1e-12));
  REQUIRE_THROWS_AS(attack_accuracy_loss(0.0, 0.5), std::invalid_argument);
  // loss of 4.77% corresponds to acc_unknown = 0.9523 * acc_known
  REQUIRE(attack_accuracy_loss(0.9, 0.9 * (1.0 - 0.0477)) == Catch::Approx(0.0477).margin(1e-12));
}

TEST_CASE("blindmi move decision matches a hand MMD computation") {
  // candidate c and reference r0, r1; the move is accepted iff
  // MMD({others}, {refs, c}) > MMD({others, c}, {refs})
  PointSet candidates{{0.9, 0.1}, {0.1, 0.9}};  // second one sits on the reference
  PointSet reference{{0.1, 0.9}, {0.15, 0.85}};

  std::vector<char> member = blindmi_moves(candidates, reference, 20);

  PointSet all = candidates;
  all.insert(all.end(), reference.begin(), reference.end());
  const double bw = median_sq_distance(all);
  // hand evaluation of the first tentative move (candidate 0)
  const double before01 = gaussian_mmd2(candidates, reference, bw);
  // candidate 1 duplicates a reference point: moving it must not decrease MMD
  const double after_move1 =
      gaussian_mmd2({{0.9, 0.1}}, {{0.1, 0.9}, {0.15, 0.85}, {0.1, 0.9}}, bw);
  REQUIRE(after_move1 >= before01 - 1e-12);
  // and the implementation indeed labels it a non-member
  REQUIRE(member[1] == 0);
  // the far-away candidate stays a member
  REQUIRE(member[0] == 1);
}

TEST_CASE("blindmi reaches a fixed point") {
  Rng rng(17);
  PointSet candidates, reference;
  for (int i = 0; i < 30; ++i)
    candidates.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  for (int i = 0; i < 10; ++i)
    reference.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  std::vector<char> a = blindmi_moves(candidates, reference, 20);
  // one more round budget changes nothing once converged
  std::vector<char> b = blindmi_moves(candidates, reference, 21);
  REQUIRE(a == b);
}

TEST_CASE("samia attack is deterministic and validates inputs") {
  AttackDataset shadow, target;
  shadow.num_classes = target.num_classes = 3;
  Rng rng(19);
  for (int i = 0; i < 40; ++i) {
    const bool member = i % 2 == 0;
    std::vector<double> p(3), s(3);
    double z = 0;
    for (auto& v : p) {
      v = rng.uniform() + (member ? 0.3 : 0.0);
      z += v;
    }
    for (auto& v : p) v /= z;
    for (auto& v : s) v = rng.uniform() * (member ? 0.5 : 1.0);
    shadow.rows.push_back(make_row(p, static_cast<int>(rng.below(3)), member, s));
    target.rows.push_back(make_row(p, static_cast<int>(rng.below(3)), member, s));
  }
  AttentionAttackSpec spec;
  spec.num_classes = 3;
  AttackTrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 7;
  AttackResult r1 = samia_attack(shadow, target, spec, cfg);
  AttackResult r2 = samia_attack(shadow, target, spec, cfg);
  REQUIRE(r1.accuracy == r2.accuracy);
  REQUIRE(r1.predictions == r2.predictions);
  REQUIRE(r1.scores == r2.scores);

  AttackDataset no_sens = shadow;
  for (auto& r : no_sens.rows) r.sensitivity.clear();
  REQUIRE_THROWS_AS(samia_attack(no_sens, target, spec, cfg), std::invalid_argument);
}

TEST_CASE("attack dataset csv round-trip") {
  AttackDataset ds;
  ds.num_classes = 3;
  ds.rows = {make_row({0.2, 0.5, 0.3}, 1, true, {0.1, 0.2, 0.3}),
             make_row({0.6, 0.2, 0.2}, 0, false, {0.4, 0.0, 0.9})};
  save_attack_csv(ds, "attack_test.csv");
  AttackDataset back = load_attack_csv("attack_test.csv");
  std::remove("attack_test.csv");
  REQUIRE(back.num_classes == 3);
  REQUIRE(back.rows.size() == 2);
  REQUIRE(back.rows[0].is_member);
  REQUIRE_FALSE(back.rows[1].is_member);
  REQUIRE(back.rows[0].posterior == ds.rows[0].posterior);
  REQUIRE(back.rows[1].sensitivity == ds.rows[1].sensitivity);
  REQUIRE(back.rows[0].label == 1);
}

TEST_CASE("shadow ensemble basics") {
  data::SyntheticSpec sspec{4, 12, 30, 0.1};
  data::Dataset ds = data::synth_generate(sspec, 23);
  std::vector<int> shadow_half;
  for (int i = 0; i < 60; ++i) shadow_half.push_back(i * 2);

  ShadowConfig cfg;
  cfg.count = 1;  // degenerate single-shadow ensemble is supported
  cfg.spec = MlpSpec{12, {16, 8}, 4};
  cfg.method = prune::PruneMethod::L1Unstructured;
  cfg.gamma = 0.5;
  cfg.fine_tune_defense.max_epochs = 3;
  cfg.original_defense.max_epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 23;
  ShadowEnsemble ens = build_shadow_ensemble(ds, shadow_half, cfg);
  REQUIRE(ens.shadows.size() == 1);
  REQUIRE(ens.shadows[0].pruned.mask_respected());
  // member and non-member sets are disjoint
  for (int m : ens.shadows[0].member_idx)
    for (int n : ens.shadows[0].non_member_idx) REQUIRE(m != n);

  ExtractConfig ecfg;
  ecfg.with_sensitivity = false;
  AttackDataset rows = shadow_attack_dataset(ens, ds, true, ecfg);
  std::size_t members = 0;
  for (const auto& r : rows.rows) {
    members += r.is_member ? 1 : 0;
    double s = 0;
    for (double v : r.posterior) s += v;
    REQUIRE(std::fabs(s - 1.0) <= 1e-9);
  }
  REQUIRE(members * 2 == rows.rows.size());  // balanced construction

  REQUIRE_THROWS_AS(build_shadow_ensemble(ds, {1, 2, 3}, cfg), std::invalid_argument);
}

TEST_CASE("feature extraction is bit-stable under a fixed seed") {
  data::SyntheticSpec sspec{3, 10, 20, 0.1};
  data::Dataset ds = data::synth_generate(sspec, 29);
  Rng rng = substream(29, "extract-init");
  MlpModel m = init_mlp(MlpSpec{10, {8}, 3}, false, rng);
  ExtractConfig cfg;
  cfg.sensitivity.seed = 29;
  AttackDataset a = extract_features(m, ds, {0, 1, 2}, {3, 4, 5}, cfg);
  AttackDataset b = extract_features(m, ds, {0, 1, 2}, {3, 4, 5}, cfg);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    REQUIRE(a.rows[i].posterior == b.rows[i].posterior);
    REQUIRE(a.rows[i].sensitivity == b.rows[i].sensitivity);
  }
  // constant model: sensitivity column is exactly zero
  MlpModel constant;
  constant.spec = MlpSpec{10, {4}, 3};
  constant.weights = {Tensor::zeros({4, 10}), Tensor::zeros({3, 4})};
  constant.biases = {Tensor::zeros({4}), Tensor::zeros({3})};
  AttackDataset c = extract_features(constant, ds, {0}, {1}, cfg);
  for (double v : c.rows[0].sensitivity) REQUIRE(v == 0.0);
}
