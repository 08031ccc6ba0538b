#include <catch2/catch_amalgamated.hpp>

#include "prunemia/defenses.hpp"
#include "prunemia/train.hpp"

using namespace prunemia;
using namespace prunemia::defense;

TEST_CASE("kl divergence formula") {
  REQUIRE(kl_divergence({0.3, 0.7}, {0.3, 0.7}) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == Catch::Approx(std::log(2.0)).margin(1e-12));
  REQUIRE_THROWS_AS(kl_divergence({1.0}, {0.5, 0.5}), ShapeError);
  REQUIRE_THROWS_AS(kl_divergence({0.4, 0.4}, {0.5, 0.5}), std::invalid_argument);

  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int i = 0; i < 5; ++i) {
      p[i] = rng.uniform() + 1e-6;
      q[i] = rng.uniform() + 1e-6;
      sp += p[i];
      sq += q[i];
    }
    for (int i = 0; i < 5; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    REQUIRE(kl_divergence(p, q) >= -1e-12);  // Gibbs' inequality
  }
}

TEST_CASE("ppb loss basics") {
  Graph g;
  Rng pairs(7);
  // identical posteriors -> zero loss
  Tensor same({4, 3}, {0.2, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, 0.3});
  REQUIRE(ppb_loss(g.input(same), 2.0, pairs).value()[0] == Catch::Approx(0.0).margin(1e-15));

  // rank invariance: (0.7,0.3) and (0.3,0.7) sort to the same vector
  Graph g2;
  Rng pairs2(7);
  Tensor two({2, 2}, {0.7, 0.3, 0.3, 0.7});
  REQUIRE(ppb_loss(g2.input(two), 1.0, pairs2).value()[0] == Catch::Approx(0.0).margin(1e-15));

  // hand-computed pair value
  Graph g3;
  Rng pairs3(7);
  Tensor pair({2, 2}, {0.9, 0.1, 0.6, 0.4});
  const double expect =
      0.9 * std::log(0.9 / 0.6) + 0.1 * std::log(0.1 / 0.4);  // one orientation
  const double other = 0.6 * std::log(0.6 / 0.9) + 0.4 * std::log(0.4 / 0.1);
  const double got = ppb_loss(g3.input(pair), 1.0, pairs3).value()[0];
  const bool matches = std::fabs(got - expect) < 1e-12 || std::fabs(got - other) < 1e-12;
  REQUIRE(matches);
  REQUIRE(std::fabs(expect - 0.2263) < 1e-4);

  Graph g4;
  Rng pairs4(7);
  REQUIRE_THROWS_AS(ppb_loss(g4.input(Tensor({1, 2}, {0.5, 0.5})), 1.0, pairs4),
                    std::invalid_argument);
}

TEST_CASE("ppb loss is exactly invariant under per-sample permutations") {
  Rng rng(9);
  Tensor batch({6, 4});
  for (std::int64_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::int64_t c = 0; c < 4; ++c) {
      batch[r * 4 + c] = rng.uniform() + 0.01;
      s += batch[r * 4 + c];
    }
    for (std::int64_t c = 0; c < 4; ++c) batch[r * 4 + c] /= s;
  }
  Graph ga;
  Rng pa(33);
  const double base = ppb_loss(ga.input(batch), 3.0, pa).value()[0];
  REQUIRE(base >= 0.0);

  Tensor shuffled = batch;
  Rng perm_rng(10);
  for (std::int64_t r = 0; r < 6; ++r) {
    std::vector<double> row(4);
    for (std::int64_t c = 0; c < 4; ++c) row[static_cast<std::size_t>(c)] = batch[r * 4 + c];
    perm_rng.shuffle(row);
    for (std::int64_t c = 0; c < 4; ++c) shuffled[r * 4 + c] = row[static_cast<std::size_t>(c)];
  }
  Graph gb;
  Rng pb(33);
  const double permuted = ppb_loss(gb.input(shuffled), 3.0, pb).value()[0];
  REQUIRE(permuted == base);  // exact, sorting absorbs the permutation
}

TEST_CASE("ppb gradients reach both pair members") {
  Graph g;
  Tensor logits({2, 3}, {1.0, 0.2, -0.5, 0.1, 0.9, -1.0});
  Var z = g.leaf("z", logits);
  Rng pairs(21);
  g.backward(ppb_loss(softmax(z), 1.0, pairs));
  Tensor grad = g.leaf_grad("z");
  double norm0 = 0, norm1 = 0;
  for (int c = 0; c < 3; ++c) {
    norm0 += std::fabs(grad[c]);
    norm1 += std::fabs(grad[3 + c]);
  }
  REQUIRE(norm0 > 1e-8);
  REQUIRE(norm1 > 1e-8);
}

TEST_CASE("dp step with zero noise equals the plain averaged step") {
  Tensor p1 = Tensor::row({0.5, -0.5});
  Tensor p2 = p1;
  std::vector<std::vector<Tensor>> grads{{Tensor::row({0.1, 0.2})}, {Tensor::row({0.3, -0.4})}};
  auto grads_copy = grads;
  Rng noise(3);
  dp_sgd_step({&p1}, grads, 100.0, 0.0, 0.1, noise);
  // manual mean-gradient step
  for (int i = 0; i < 2; ++i)
    p2[i] -= 0.1 * (grads_copy[0][0][i] + grads_copy[1][0][i]) / 2.0;
  REQUIRE(p1.vec() == p2.vec());
}

TEST_CASE("per-sample clipping rescales to the clip norm exactly") {
  Tensor p = Tensor::row({0.0, 0.0});
  std::vector<std::vector<Tensor>> grads{{Tensor::row({6.0, 8.0})}};  // norm 10
  Rng noise(4);
  dp_sgd_step({&p}, grads, 1.0, 0.0, 1.0, noise);
  const double norm = std::sqrt(grads[0][0][0] * grads[0][0][0] + grads[0][0][1] * grads[0][0][1]);
  REQUIRE(norm == Catch::Approx(1.0).margin(1e-12));
  // update used the clipped gradient
  REQUIRE(p[0] == Catch::Approx(-0.6).margin(1e-12));
  REQUIRE(p[1] == Catch::Approx(-0.8).margin(1e-12));
}

TEST_CASE("dp noise magnitude matches sigma * clip / batch") {
  const double sigma = 1.0, clip = 1.0, lr = 1.0;
  const int B = 4, steps = 10000;
  Rng noise = substream(5, "dp-noise-test");
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < steps; ++s) {
    Tensor p = Tensor::scalar(0.0);
    std::vector<std::vector<Tensor>> grads;
    for (int b = 0; b < B; ++b) grads.push_back({Tensor::scalar(0.0)});
    dp_sgd_step({&p}, grads, clip, sigma, lr, noise);
    const double injected = -p[0] / lr;  // zero gradients isolate the noise
    sum += injected;
    sum2 += injected * injected;
  }
  const double std_emp = std::sqrt(sum2 / steps - (sum / steps) * (sum / steps));
  REQUIRE(std_emp == Catch::Approx(sigma * clip / B).epsilon(0.05));
}

TEST_CASE("dp step validation") {
  Tensor p = Tensor::scalar(0.0);
  std::vector<std::vector<Tensor>> grads{{Tensor::scalar(1.0)}};
  Rng noise(1);
  REQUIRE_THROWS_AS(dp_sgd_step({&p}, grads, 1.0, -1.0, 0.1, noise), std::invalid_argument);
  REQUIRE_THROWS_AS(dp_sgd_step({&p}, grads, 0.0, 1.0, 0.1, noise), std::invalid_argument);
}

TEST_CASE("early stopping traces") {
  // [1.0, 1.1 x5] with patience 5 stops after the 6th update, best from the 1st
  EarlyStopState<int> st;
  int params = 1;
  REQUIRE_FALSE(early_stopping_update(st, 1.0, params, 5));
  params = 2;
  for (int i = 0; i < 4; ++i) REQUIRE_FALSE(early_stopping_update(st, 1.1, params, 5));
  REQUIRE(early_stopping_update(st, 1.1, params, 5));
  REQUIRE(st.best_val_loss == 1.0);
  REQUIRE(st.best_params == 1);
  REQUIRE(st.epochs_since_improvement == 5);

  // monotonically decreasing never stops
  EarlyStopState<int> st2;
  double loss = 10.0;
  for (int i = 0; i < 100; ++i) {
    REQUIRE_FALSE(early_stopping_update(st2, loss, params, 5));
    loss *= 0.99;
  }

  // equal-to-best counts as no improvement
  EarlyStopState<int> st3;
  early_stopping_update(st3, 1.0, params, 5);
  early_stopping_update(st3, 1.0, params, 5);
  REQUIRE(st3.epochs_since_improvement == 1);

  EarlyStopState<int> st4;
  REQUIRE_THROWS_AS(early_stopping_update(st4, std::nan(""), params, 5),
                    std::invalid_argument);
}

namespace {

data::Dataset tiny_dataset() {
  data::Dataset ds;
  ds.num_classes = 2;
  ds.features = Tensor({8, 3}, {1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 0, 1,
                                1, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0});
  ds.labels = {0, 1, 0, 1, 0, 1, 0, 1};
  return ds;
}

}  // namespace

TEST_CASE("adv defender step with alpha zero equals the plain step") {
  data::Dataset ds = tiny_dataset();
  Rng rng = substream(31, "adv-init");
  MlpModel target_a = init_mlp(MlpSpec{3, {4}, 2}, false, rng);
  MlpModel target_b = target_a;
  Rng srng = substream(31, "adv-sur");
  MlpModel surrogate = init_mlp(MlpSpec{4, {8}, 2}, false, srng);
  MlpModel surrogate_before = surrogate;

  std::vector<int> bidx{0, 1, 2, 3};
  Tensor bx = ds.rows(bidx);
  std::vector<int> by = ds.labels_of(bidx);
  Tensor px = ds.rows({4, 5});
  std::vector<int> py = ds.labels_of({4, 5});

  AdamState oa, ob, os;
  adv_fine_tune_step(target_a, oa, 0.001, 5e-4, surrogate, os, bx, by, px, py, /*alpha=*/0.0);

  // plain step: cross-entropy + weight decay on the same batch
  {
    Graph g;
    MlpVars mv = mlp_leaves(g, target_b);
    Var loss = add(cross_entropy(mlp_logits(mv, g.input(bx)), by),
                   scale(mlp_l2(mv), 5e-4 / 2.0));
    g.backward(loss);
    std::vector<Tensor*> params;
    std::vector<Tensor> grads;
    for (auto& [name, t] : target_b.named_params()) {
      params.push_back(t);
      grads.push_back(g.leaf_grad(name));
    }
    std::vector<const Tensor*> gp;
    for (auto& t : grads) gp.push_back(&t);
    adam_step(params, gp, ob, 0.001);
  }
  for (std::size_t l = 0; l < target_a.weights.size(); ++l) {
    REQUIRE(target_a.weights[l].vec() == target_b.weights[l].vec());
    REQUIRE(target_a.biases[l].vec() == target_b.biases[l].vec());
  }
  // the surrogate still trained
  bool changed = false;
  for (std::size_t l = 0; l < surrogate.weights.size() && !changed; ++l)
    changed = surrogate.weights[l].vec() != surrogate_before.weights[l].vec();
  REQUIRE(changed);
}

TEST_CASE("zero-output surrogate contributes zero adversarial gradient") {
  // the defender-step tape in isolation: a surrogate whose output layer is
  // zero yields a uniform membership posterior with zero gradient through it
  data::Dataset ds = tiny_dataset();
  Rng rng = substream(32, "adv-init");
  MlpModel target = init_mlp(MlpSpec{3, {4}, 2}, false, rng);
  Rng srng = substream(32, "adv-sur");
  MlpModel surrogate = init_mlp(MlpSpec{4, {8}, 2}, false, srng);
  surrogate.weights[1] = Tensor::zeros({2, 8});
  surrogate.biases[1] = Tensor::zeros({2});

  std::vector<int> bidx{0, 1, 2, 3};
  Tensor bx = ds.rows(bidx);
  std::vector<int> by = ds.labels_of(bidx);

  auto defender_grads = [&](double alpha) {
    Graph g;
    MlpVars tv = mlp_leaves(g, target);
    Var logits = mlp_logits(tv, g.input(bx));
    Var total = add(cross_entropy(logits, by), scale(mlp_l2(tv), 5e-4 / 2.0));
    if (alpha != 0.0) {
      Var feat = concat({softmax(logits), g.input(one_hot(by, 2))});
      MlpVars sv;
      for (std::size_t l = 0; l < surrogate.weights.size(); ++l) {
        sv.w.push_back(g.input(surrogate.weights[l]));
        sv.b.push_back(g.input(surrogate.biases[l]));
      }
      std::vector<int> member_truth(by.size(), 1);
      total = add(total, scale(cross_entropy(mlp_logits(sv, feat), member_truth), -alpha));
    }
    g.backward(total);
    return g.gradients();
  };

  auto with_adv = defender_grads(4.0);
  auto plain = defender_grads(0.0);
  for (const auto& [name, grad] : plain) REQUIRE(with_adv.at(name).vec() == grad.vec());
}

TEST_CASE("adv training requires a reference pool") {
  data::Dataset ds = tiny_dataset();
  Rng rng(33);
  MlpModel m = init_mlp(MlpSpec{3, {4}, 2}, false, rng);
  train::TrainConfig cfg;
  DefenseConfig def;
  def.kind = DefenseKind::ADV;
  def.max_epochs = 1;
  REQUIRE_THROWS_AS(train::train_mlp(m, ds, {0, 1, 2, 3}, {}, cfg, def), std::invalid_argument);
}

TEST_CASE("basic defense never exceeds max epochs and restores the best snapshot") {
  data::Dataset ds = tiny_dataset();
  Rng rng = substream(34, "basic-init");
  MlpModel m = init_mlp(MlpSpec{3, {6}, 2}, false, rng);
  train::TrainConfig cfg;
  cfg.seed = 34;
  cfg.batch_size = 4;
  DefenseConfig def;
  def.max_epochs = 12;
  def.patience = 3;
  std::vector<int> tr{0, 1, 2, 3, 4, 5};
  std::vector<int> va{6, 7};
  train::TrainReport rep = train::train_mlp(m, ds, tr, va, cfg, def);
  REQUIRE(rep.epochs_run <= 12);
  // returned parameters achieve the reported best validation loss
  REQUIRE(train::eval_ce(m, ds.rows(va), ds.labels_of(va)) ==
          Catch::Approx(rep.best_val_loss).margin(1e-12));
}
