#pragma once

#include <string>
#include <utility>
#include <vector>

#include "prunemia/graph.hpp"
#include "prunemia/mlp.hpp"
#include "prunemia/rng.hpp"
#include "prunemia/tensor.hpp"

namespace prunemia {

// Self-attention membership classifier. Three input vectors (posterior,
// sensitivity, one-hot label) are each embedded to model_dim, treated as a
// 3-token sequence, passed through `blocks` encoder blocks, mean-pooled, and
// mapped to a binary membership posterior.
struct AttentionAttackSpec {
  std::int64_t num_classes = 0;
  std::int64_t model_dim = 64;
  int heads = 4;
  int blocks = 3;
  double dropout = 0.2;

  void validate() const {
    if (num_classes <= 0) throw std::invalid_argument("AttentionAttackSpec: num_classes must be positive");
    if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
      throw std::invalid_argument("AttentionAttackSpec: model_dim must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("AttentionAttackSpec: dropout must be in [0,1)");
  }
};

struct AttentionBlockParams {
  Tensor wq, bq, wk, bk, wv, bv;  // [D x D], [D]
  Tensor wf, bf;                  // per-token FC
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct SamiaModel {
  AttentionAttackSpec spec;
  Tensor we_conf, be_conf, we_sens, be_sens, we_label, be_label;  // [D x K], [D]
  std::vector<AttentionBlockParams> blocks;
  Tensor wh1, bh1, wh2, bh2;  // pooled head: D -> D (ReLU) -> 2

  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out{
        {"we_conf", &we_conf},   {"be_conf", &be_conf}, {"we_sens", &we_sens},
        {"be_sens", &be_sens},   {"we_label", &we_label}, {"be_label", &be_label},
    };
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const std::string p = "blk" + std::to_string(i) + ".";
      out.emplace_back(p + "wq", &b.wq);
      out.emplace_back(p + "bq", &b.bq);
      out.emplace_back(p + "wk", &b.wk);
      out.emplace_back(p + "bk", &b.bk);
      out.emplace_back(p + "wv", &b.wv);
      out.emplace_back(p + "bv", &b.bv);
      out.emplace_back(p + "wf", &b.wf);
      out.emplace_back(p + "bf", &b.bf);
      out.emplace_back(p + "ln1_g", &b.ln1_g);
      out.emplace_back(p + "ln1_b", &b.ln1_b);
      out.emplace_back(p + "ln2_g", &b.ln2_g);
      out.emplace_back(p + "ln2_b", &b.ln2_b);
    }
    out.emplace_back("wh1", &wh1);
    out.emplace_back("bh1", &bh1);
    out.emplace_back("wh2", &wh2);
    out.emplace_back("bh2", &bh2);
    return out;
  }
};

inline SamiaModel init_samia(const AttentionAttackSpec& spec, Rng& rng) {
  spec.validate();
  SamiaModel m;
  m.spec = spec;
  const std::int64_t D = spec.model_dim, K = spec.num_classes;
  m.we_conf = kaiming_uniform({D, K}, K, rng);
  m.be_conf = Tensor::zeros({D});
  m.we_sens = kaiming_uniform({D, K}, K, rng);
  m.be_sens = Tensor::zeros({D});
  m.we_label = kaiming_uniform({D, K}, K, rng);
  m.be_label = Tensor::zeros({D});
  for (int i = 0; i < spec.blocks; ++i) {
    AttentionBlockParams b;
    b.wq = kaiming_uniform({D, D}, D, rng);
    b.bq = Tensor::zeros({D});
    b.wk = kaiming_uniform({D, D}, D, rng);
    b.bk = Tensor::zeros({D});
    b.wv = kaiming_uniform({D, D}, D, rng);
    b.bv = Tensor::zeros({D});
    b.wf = kaiming_uniform({D, D}, D, rng);
    b.bf = Tensor::zeros({D});
    b.ln1_g = Tensor::ones({D});
    b.ln1_b = Tensor::zeros({D});
    b.ln2_g = Tensor::ones({D});
    b.ln2_b = Tensor::zeros({D});
    m.blocks.push_back(std::move(b));
  }
  m.wh1 = kaiming_uniform({D, D}, D, rng);
  m.bh1 = Tensor::zeros({D});
  m.wh2 = kaiming_uniform({2, D}, D, rng);
  m.bh2 = Tensor::zeros({2});
  return m;
}

struct SamiaVars {
  std::vector<std::pair<std::string, Var>> all;
  Var get(const std::string& name) const {
    for (const auto& [n, v] : all)
      if (n == name) return v;
    throw std::invalid_argument("SamiaVars: unknown param " + name);
  }
};

inline SamiaVars samia_leaves(Graph& g, SamiaModel& m) {
  SamiaVars v;
  for (auto& [name, t] : m.named_params()) v.all.emplace_back(name, g.leaf(name, *t));
  return v;
}

// Multi-head scaled dot-product attention over [B, L, D] token batches.
// Per head: softmax(Q K^T / sqrt(d_head)) V; heads are concatenated back to D.
inline Var multi_head_attention(Var tokens, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv,
                                int heads) {
  const Tensor& tv = tokens.value();
  if (tv.rank() != 3) throw ShapeError("attention: expected [B,L,D], got " + shape_str(tv.shape()));
  const std::int64_t D = tv.dim(2);
  const std::int64_t dh = D / heads;
  Var q = linear(tokens, wq, bq);
  Var k = linear(tokens, wk, bk);
  Var v = linear(tokens, wv, bv);
  std::vector<Var> head_outs;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_last(q, h * dh, dh);
    Var kh = slice_last(k, h * dh, dh);
    Var vh = slice_last(v, h * dh, dh);
    Var scores = scale(bmm(qh, kh, /*transpose_b=*/true), inv_sqrt_dh);
    Var attn = softmax(scores);
    head_outs.push_back(bmm(attn, vh));
  }
  return concat(head_outs);
}

// One encoder block: attention + residual + layer norm, then a per-token FC
// with GeLU + residual + layer norm. Dropout sits on both sub-layer outputs.
struct BlockVars {
  Var wq, bq, wk, bk, wv, bv, wf, bf, ln1_g, ln1_b, ln2_g, ln2_b;
};

inline BlockVars block_vars(const SamiaVars& v, int i) {
  const std::string p = "blk" + std::to_string(i) + ".";
  return BlockVars{v.get(p + "wq"),    v.get(p + "bq"),    v.get(p + "wk"),    v.get(p + "bk"),
                   v.get(p + "wv"),    v.get(p + "bv"),    v.get(p + "wf"),    v.get(p + "bf"),
                   v.get(p + "ln1_g"), v.get(p + "ln1_b"), v.get(p + "ln2_g"), v.get(p + "ln2_b")};
}

inline Var attention_block_forward(Var tokens, const BlockVars& b, int heads, double drop_rate,
                                   Rng& rng, bool training) {
  Var attn = multi_head_attention(tokens, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, heads);
  attn = dropout(attn, drop_rate, rng, training);
  Var x1 = layer_norm(add(tokens, attn), b.ln1_g, b.ln1_b);
  Var ff = gelu(linear(x1, b.wf, b.bf));
  ff = dropout(ff, drop_rate, rng, training);
  return layer_norm(add(x1, ff), b.ln2_g, b.ln2_b);
}

// Membership logits for a batch of attack inputs.
inline Var samia_logits(Graph& g, const SamiaVars& v, const AttentionAttackSpec& spec,
                        Var posterior, Var sensitivity, Var label_onehot, Rng& rng, bool training) {
  const std::int64_t B = posterior.value().dim(0);
  const std::int64_t D = spec.model_dim;
  Var t_conf = linear(posterior, v.get("we_conf"), v.get("be_conf"));
  Var t_sens = linear(sensitivity, v.get("we_sens"), v.get("be_sens"));
  Var t_label = linear(label_onehot, v.get("we_label"), v.get("be_label"));
  Var tokens = reshape(concat({t_conf, t_sens, t_label}), {B, 3, D});
  for (int i = 0; i < spec.blocks; ++i)
    tokens = attention_block_forward(tokens, block_vars(v, i), spec.heads, spec.dropout, rng,
                                     training);
  Var pooled = mean_axis(tokens, 1);  // [B, D]
  Var h = relu(linear(pooled, v.get("wh1"), v.get("bh1")));
  return linear(h, v.get("wh2"), v.get("bh2"));
}

struct AttackInputBatch {
  Tensor posterior;     // [B, K]
  Tensor sensitivity;   // [B, K]
  Tensor label_onehot;  // [B, K]
};

// Membership posterior [B, 2] in evaluation mode; column 1 is the member
// probability.
inline Tensor samia_forward(SamiaModel& m, const AttackInputBatch& in) {
  if (in.posterior.last_dim() != m.spec.num_classes ||
      in.sensitivity.last_dim() != m.spec.num_classes ||
      in.label_onehot.last_dim() != m.spec.num_classes)
    throw ShapeError("samia_forward: input class count does not match spec K=" +
                     std::to_string(m.spec.num_classes));
  Graph g;
  SamiaVars v = samia_leaves(g, m);
  Rng rng(0);  // unused in eval mode
  Var logits = samia_logits(g, v, m.spec, g.input(in.posterior), g.input(in.sensitivity),
                            g.input(in.label_onehot), rng, /*training=*/false);
  Var post = softmax(logits);
  return post.value();
}

// Evaluation-mode single block on a [L, D] token matrix; `attn_weights`, when
// given, receives the softmax scores as [heads, L, L] and `pre_residual` the
// concatenated head outputs before the residual add.
inline Tensor attention_block_eval(const AttentionBlockParams& p, const Tensor& tokens, int heads,
                                   Tensor* attn_weights = nullptr, Tensor* pre_residual = nullptr) {
  if (tokens.rank() != 2) throw ShapeError("attention_block: expected [L,D] tokens");
  if (!tokens.all_finite()) throw NumericError("attention_block: non-finite input");
  const std::int64_t L = tokens.dim(0), D = tokens.dim(1);
  Graph g;
  Var t = reshape(g.input(tokens), {1, L, D});
  Var wq = g.input(p.wq), bq = g.input(p.bq), wk = g.input(p.wk), bk = g.input(p.bk),
      wv = g.input(p.wv), bv = g.input(p.bv);
  // Re-run attention capturing the per-head weights.
  const std::int64_t dh = D / heads;
  Var q = linear(t, wq, bq), k = linear(t, wk, bk), v = linear(t, wv, bv);
  std::vector<Var> outs;
  if (attn_weights) *attn_weights = Tensor({heads, L, L});
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_last(q, h * dh, dh);
    Var kh = slice_last(k, h * dh, dh);
    Var vh = slice_last(v, h * dh, dh);
    Var attn = softmax(scale(bmm(qh, kh, true), inv_sqrt_dh));
    if (attn_weights)
      for (std::int64_t i = 0; i < L * L; ++i) (*attn_weights)[h * L * L + i] = attn.value()[i];
    outs.push_back(bmm(attn, vh));
  }
  Var merged = concat(outs);
  if (pre_residual) *pre_residual = merged.value().reshaped({L, D});
  Var x1 = layer_norm(add(t, merged), g.input(p.ln1_g), g.input(p.ln1_b));
  Var ff = gelu(linear(x1, g.input(p.wf), g.input(p.bf)));
  Var out = layer_norm(add(x1, ff), g.input(p.ln2_g), g.input(p.ln2_b));
  return out.value().reshaped({L, D});
}

}  // namespace prunemia
