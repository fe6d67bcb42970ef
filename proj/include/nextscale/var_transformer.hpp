#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nextscale/ops.hpp"
#include "nextscale/rng.hpp"
#include "nextscale/schedule.hpp"
#include "nextscale/tensor.hpp"
#include "nextscale/tokenizer.hpp"

namespace nextscale {

template <typename T>
struct VarTransformerConfig {
  int64_t vocab = 32;      // token vocabulary, matches the tokenizer codebook
  int64_t width = 128;
  int64_t heads = 4;
  int64_t depth = 4;
  int64_t text_dim = 64;
  int64_t code_dim = 16;
  ScaleSchedule schedule = default_schedule();
};

// ---------------------------------------------------------------------------
// block-causal mask

// Position 0 is the condition token (scale label 0); token positions of
// scale k carry label k. i may attend to j iff label(j) <= label(i):
// full attention inside a scale and to everything earlier, never later.
struct BlockCausalMask {
  int64_t size = 0;
  std::vector<int64_t> scale_of;  // per position, 0 = condition
  std::vector<uint8_t> allow;     // row-major size x size

  bool allowed(int64_t i, int64_t j) const {
    return allow[static_cast<size_t>(i * size + j)] != 0;
  }
};

inline BlockCausalMask build_mask(const ScaleSchedule& schedule) {
  schedule.validate();
  BlockCausalMask mask;
  mask.scale_of.push_back(0);
  for (int64_t k = 0; k < schedule.num_scales(); ++k) {
    for (int64_t p = 0; p < schedule.tokens_at(k); ++p) {
      mask.scale_of.push_back(k + 1);
    }
  }
  mask.size = static_cast<int64_t>(mask.scale_of.size());
  mask.allow.assign(static_cast<size_t>(mask.size * mask.size), 0);
  for (int64_t i = 0; i < mask.size; ++i) {
    for (int64_t j = 0; j < mask.size; ++j) {
      if (mask.scale_of[static_cast<size_t>(j)] <=
          mask.scale_of[static_cast<size_t>(i)]) {
        mask.allow[static_cast<size_t>(i * mask.size + j)] = 1;
      }
    }
  }
  return mask;
}

template <typename T>
Tensor<T> additive_mask(const BlockCausalMask& mask) {
  Tensor<T> m = Tensor<T>::zeros({mask.size, mask.size});
  for (int64_t i = 0; i < mask.size; ++i) {
    for (int64_t j = 0; j < mask.size; ++j) {
      if (!mask.allowed(i, j)) {
        m.values()[static_cast<size_t>(i * mask.size + j)] =
            -std::numeric_limits<T>::infinity();
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// classifier-free guidance in embedding space

template <typename T>
struct GuidanceConfig {
  T weight = T(0);          // t
  uint64_t noise_seed = 0;  // e_n is deterministic given this
};

template <typename T>
Tensor<T> guidance_noise(int64_t dim, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> e_n = Tensor<T>::zeros({dim});
  for (T& v : e_n.values()) v = static_cast<T>(rng.normal());
  return e_n;
}

// (1+t) * e_c - t * e_n
template <typename T>
Tensor<T> cfg_embed(const Tensor<T>& e_c, const Tensor<T>& e_n, T t) {
  if (e_c.shape() != e_n.shape()) {
    throw std::invalid_argument("cfg_embed: e_c " + shape_str(e_c.shape()) +
                                " vs e_n " + shape_str(e_n.shape()));
  }
  return sub(mul_scalar(e_c, T(1) + t), mul_scalar(e_n, t));
}

template <typename T>
Tensor<T> cfg_embed(const Tensor<T>& e_c, const GuidanceConfig<T>& config) {
  Tensor<T> e_n = guidance_noise<T>(e_c.numel(), config.noise_seed);
  return cfg_embed(e_c, reshape(e_n, e_c.shape()), config.weight);
}

// Training-time counterpart: with probability `rate` the embedding is
// replaced by fresh standard-normal noise.
template <typename T>
Tensor<T> condition_dropout(const Tensor<T>& e_c, T rate, Rng& rng) {
  if (rate < T(0) || rate > T(1)) {
    throw std::invalid_argument("condition_dropout: rate out of [0,1]");
  }
  if (static_cast<T>(rng.uniform()) < rate) {
    Tensor<T> noise = Tensor<T>::zeros(e_c.shape());
    for (T& v : noise.values()) v = static_cast<T>(rng.normal());
    return noise;
  }
  return e_c;
}

// ---------------------------------------------------------------------------
// parameters

template <typename T>
struct VarBlock {
  Tensor<T> ada_w, ada_b;  // e_c -> (g1,b1,a1,g2,b2,a2), each of width D
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct VarParams {
  VarTransformerConfig<T> config;
  Tensor<T> start_w, start_b;  // condition start token projection
  Tensor<T> input_w, input_b;  // decoded-context feature embedding
  std::vector<Tensor<T>> pos_emb;  // per scale, (h_k*w_k, D)
  Tensor<T> scale_emb;             // (K, D)
  std::vector<VarBlock<T>> blocks;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> head_w, head_b;  // (D,V), (V)

  std::vector<std::pair<std::string, Tensor<T>>> named() {
    std::vector<std::pair<std::string, Tensor<T>>> out = {
        {"var.start_w", start_w}, {"var.start_b", start_b},
        {"var.input_w", input_w}, {"var.input_b", input_b},
        {"var.scale_emb", scale_emb}};
    for (size_t k = 0; k < pos_emb.size(); ++k) {
      out.emplace_back("var.pos_emb" + std::to_string(k), pos_emb[k]);
    }
    for (size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      const std::string p = "var.block" + std::to_string(l) + ".";
      out.insert(out.end(),
                 {{p + "ada_w", b.ada_w}, {p + "ada_b", b.ada_b},
                  {p + "wq", b.wq},       {p + "bq", b.bq},
                  {p + "wk", b.wk},       {p + "bk", b.bk},
                  {p + "wv", b.wv},       {p + "bv", b.bv},
                  {p + "wo", b.wo},       {p + "bo", b.bo},
                  {p + "w1", b.w1},       {p + "b1", b.b1},
                  {p + "w2", b.w2},       {p + "b2", b.b2}});
    }
    out.insert(out.end(), {{"var.lnf_g", lnf_g},
                           {"var.lnf_b", lnf_b},
                           {"var.head_w", head_w},
                           {"var.head_b", head_b}});
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& [name, t] : named()) t.set_requires_grad(on);
  }
};

template <typename T>
VarParams<T> init_var_params(const VarTransformerConfig<T>& config,
                             uint64_t seed) {
  config.schedule.validate();
  if (config.width % config.heads != 0) {
    throw std::invalid_argument("var: head count must divide width");
  }
  Rng rng(seed);
  const int64_t d = config.width;
  const T std_dev = T(0.02);
  auto dense = [&](Shape shape) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
    for (T& v : t.values()) v = static_cast<T>(rng.normal()) * std_dev;
    return t;
  };
  VarParams<T> p;
  p.config = config;
  p.start_w = dense({config.text_dim, d});
  p.start_b = Tensor<T>::zeros({d}, true);
  p.input_w = dense({config.code_dim, d});
  p.input_b = Tensor<T>::zeros({d}, true);
  for (int64_t k = 0; k < config.schedule.num_scales(); ++k) {
    p.pos_emb.push_back(dense({config.schedule.tokens_at(k), d}));
  }
  p.scale_emb = dense({config.schedule.num_scales(), d});
  for (int64_t l = 0; l < config.depth; ++l) {
    VarBlock<T> b;
    // zero-init conditioning projection; bias fixes the gates open so
    // attention is active before any training
    b.ada_w = Tensor<T>::zeros({config.text_dim, 6 * d}, true);
    b.ada_b = Tensor<T>::zeros({6 * d}, true);
    for (int64_t i = 0; i < d; ++i) {
      b.ada_b.values()[static_cast<size_t>(2 * d + i)] = T(1);  // a1
      b.ada_b.values()[static_cast<size_t>(5 * d + i)] = T(1);  // a2
    }
    b.wq = dense({d, d});
    b.bq = Tensor<T>::zeros({d}, true);
    b.wk = dense({d, d});
    b.bk = Tensor<T>::zeros({d}, true);
    b.wv = dense({d, d});
    b.bv = Tensor<T>::zeros({d}, true);
    b.wo = dense({d, d});
    b.bo = Tensor<T>::zeros({d}, true);
    b.w1 = dense({d, 4 * d});
    b.b1 = Tensor<T>::zeros({4 * d}, true);
    b.w2 = dense({4 * d, d});
    b.b2 = Tensor<T>::zeros({d}, true);
    p.blocks.push_back(std::move(b));
  }
  p.lnf_g = Tensor<T>::full({d}, T(1), true);
  p.lnf_b = Tensor<T>::zeros({d}, true);
  p.head_w = dense({d, config.vocab});
  p.head_b = Tensor<T>::zeros({config.vocab}, true);
  return p;
}

// ---------------------------------------------------------------------------
// forward

namespace detail {

template <typename T>
Tensor<T> linear3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int64_t batch = x.shape()[0], s = x.shape()[1], d = x.shape()[2];
  Tensor<T> y = linear(reshape(x, {batch * s, d}), w, b);
  return reshape(y, {batch, s, w.shape()[1]});
}

// x: (B,S,D) -> (B,S,D), additive mask (S,S) shared across the batch.
template <typename T>
Tensor<T> var_attention(const VarBlock<T>& blk, const Tensor<T>& x,
                        int64_t heads, const Tensor<T>& mask) {
  const int64_t batch = x.shape()[0], s = x.shape()[1], d = x.shape()[2];
  const int64_t dh = d / heads;
  auto split = [&](const Tensor<T>& t) {
    return reshape(permute(reshape(t, {batch, s, heads, dh}), {0, 2, 1, 3}),
                   {batch * heads, s, dh});
  };
  Tensor<T> q = split(linear3d(x, blk.wq, blk.bq));
  Tensor<T> k = split(linear3d(x, blk.wk, blk.bk));
  Tensor<T> v = split(linear3d(x, blk.wv, blk.bv));
  Tensor<T> scores = mul_scalar(batched_matmul(q, k, /*trans_b=*/true),
                                T(1) / std::sqrt(static_cast<T>(dh)));
  Tensor<T> probs = softmax(add(scores, mask));
  Tensor<T> ctx = batched_matmul(probs, v);  // (B*H,S,dh)
  ctx = reshape(permute(reshape(ctx, {batch, heads, s, dh}), {0, 2, 1, 3}),
                {batch, s, d});
  return linear3d(ctx, blk.wo, blk.bo);
}

}  // namespace detail

// Per-image prefix features for teacher forcing, from ground-truth tokens.
template <typename T>
std::vector<std::vector<std::vector<T>>> build_contexts(
    const std::vector<MultiScaleTokens>& tokens, const ScaleSchedule& schedule,
    const T* codebook, int64_t code_dim, const PhiRaw<T>* phi = nullptr) {
  std::vector<std::vector<std::vector<T>>> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    out.push_back(scale_context_features(t, schedule, codebook, code_dim, phi));
  }
  return out;
}

template <typename T>
struct VarForwardResult {
  Tensor<T> logits;     // (B * num_positions, V), batch-major
  Tensor<T> nll;        // scalar, summed over every position of every image
  int64_t num_positions = 0;  // token positions per image
};

// Teacher-forced forward over the first `num_scales` scales (all when -1).
// Scale-k inputs are built exclusively from scales < k; the block-causal
// mask enforces the same rule inside attention.
template <typename T>
VarForwardResult<T> forward_teacher_forced(
    const VarParams<T>& p, const std::vector<MultiScaleTokens>& tokens,
    const Tensor<T>& cond,
    const std::vector<std::vector<std::vector<T>>>& contexts,
    int64_t num_scales = -1) {
  const auto& config = p.config;
  const ScaleSchedule& schedule = config.schedule;
  const int64_t scales =
      num_scales < 0 ? schedule.num_scales() : num_scales;
  const int64_t batch = static_cast<int64_t>(tokens.size());
  if (cond.dim() != 2 || cond.shape()[0] != batch ||
      cond.shape()[1] != config.text_dim) {
    throw std::invalid_argument("var forward: condition " +
                                shape_str(cond.shape()) + " for batch " +
                                std::to_string(batch) + ", text_dim " +
                                std::to_string(config.text_dim));
  }
  int64_t num_pos = 0;
  for (int64_t k = 0; k < scales; ++k) num_pos += schedule.tokens_at(k);

  // token-position input features, batch-major; scale 0 rows are zero
  std::vector<T> feat(static_cast<size_t>(batch * num_pos * config.code_dim),
                      T(0));
  std::vector<int64_t> scale_ids;
  scale_ids.reserve(static_cast<size_t>(num_pos));
  for (int64_t k = 0; k < scales; ++k) {
    for (int64_t j = 0; j < schedule.tokens_at(k); ++j) scale_ids.push_back(k);
  }
  for (int64_t b = 0; b < batch; ++b) {
    int64_t row = 0;
    for (int64_t k = 0; k < scales; ++k) {
      const int64_t n = schedule.tokens_at(k);
      if (k > 0) {
        const auto& ctx = contexts[static_cast<size_t>(b)][static_cast<size_t>(k)];
        if (static_cast<int64_t>(ctx.size()) != n * config.code_dim) {
          throw std::invalid_argument("var forward: context for scale " +
                                      std::to_string(k) + " has wrong size");
        }
        std::copy(ctx.begin(), ctx.end(),
                  feat.begin() + (b * num_pos + row) * config.code_dim);
      }
      row += n;
    }
  }

  Tensor<T> feat_t = Tensor<T>::from_values(
      {batch * num_pos, config.code_dim}, std::move(feat));
  Tensor<T> tok_in = linear(feat_t, p.input_w, p.input_b);
  tok_in = reshape(tok_in, {batch, num_pos, config.width});

  std::vector<Tensor<T>> pos_parts;
  for (int64_t k = 0; k < scales; ++k) {
    pos_parts.push_back(p.pos_emb[static_cast<size_t>(k)]);
  }
  Tensor<T> pos_all = concat(pos_parts, 0);                    // (num_pos, D)
  Tensor<T> scale_all = embedding_lookup(p.scale_emb, scale_ids);
  tok_in = add(tok_in, add(pos_all, scale_all));

  Tensor<T> cond_tok = reshape(linear(cond, p.start_w, p.start_b),
                               {batch, 1, config.width});
  Tensor<T> x = concat<T>({cond_tok, tok_in}, 1);  // (B, 1+num_pos, D)

  ScaleSchedule truncated;
  truncated.sizes.assign(schedule.sizes.begin(),
                         schedule.sizes.begin() + scales);
  Tensor<T> mask = additive_mask<T>(build_mask(truncated));

  for (const auto& blk : p.blocks) {
    Tensor<T> ada = linear(cond, blk.ada_w, blk.ada_b);  // (B, 6D)
    const int64_t d = config.width;
    auto chunk = [&](int64_t i) {
      return reshape(narrow(ada, 1, i * d, d), {batch, 1, d});
    };
    Tensor<T> h = layernorm(x);
    h = add(mul(h, add_scalar(chunk(0), T(1))), chunk(1));
    x = add(x, mul(chunk(2), detail::var_attention(blk, h, config.heads, mask)));
    h = layernorm(x);
    h = add(mul(h, add_scalar(chunk(3), T(1))), chunk(4));
    h = detail::linear3d(gelu(detail::linear3d(h, blk.w1, blk.b1)), blk.w2,
                         blk.b2);
    x = add(x, mul(chunk(5), h));
  }
  x = add(mul(layernorm(x), p.lnf_g), p.lnf_b);

  Tensor<T> hidden = narrow(x, 1, 1, num_pos);  // drop the condition position
  Tensor<T> logits = linear(reshape(hidden, {batch * num_pos, config.width}),
                            p.head_w, p.head_b);

  std::vector<int64_t> targets;
  targets.reserve(static_cast<size_t>(batch * num_pos));
  for (const auto& t : tokens) {
    for (int64_t k = 0; k < scales; ++k) {
      const auto& map = t.maps[static_cast<size_t>(k)];
      targets.insert(targets.end(), map.begin(), map.end());
    }
  }
  VarForwardResult<T> result;
  result.nll = cross_entropy_with_logits(logits, targets, Reduction::kSum);
  result.logits = std::move(logits);
  result.num_positions = num_pos;
  return result;
}

// ---------------------------------------------------------------------------
// sampling

template <typename T>
struct SamplerConfig {
  T temperature = T(1);
  int64_t top_k = 0;  // 0 disables
  T top_p = T(1);
  bool greedy = false;

  void validate(int64_t vocab) const {
    if (temperature < T(0)) {
      throw std::invalid_argument("sampler: temperature must be >= 0");
    }
    if (!(top_p > T(0) && top_p <= T(1))) {
      throw std::invalid_argument("sampler: top_p must be in (0,1]");
    }
    if (top_k < 0 || top_k > vocab) {
      throw std::invalid_argument("sampler: top_k out of [0,V]");
    }
  }
};

namespace detail {

template <typename T>
int64_t sample_from_logits(const T* logits, int64_t vocab,
                           const SamplerConfig<T>& sampler, Rng& rng) {
  if (sampler.greedy || sampler.temperature == T(0)) {
    int64_t best = 0;
    for (int64_t v = 1; v < vocab; ++v) {
      if (logits[v] > logits[best]) best = v;
    }
    return best;
  }
  std::vector<double> scaled(static_cast<size_t>(vocab));
  for (int64_t v = 0; v < vocab; ++v) {
    scaled[static_cast<size_t>(v)] =
        static_cast<double>(logits[v]) / static_cast<double>(sampler.temperature);
  }
  std::vector<int64_t> order(static_cast<size_t>(vocab));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return scaled[static_cast<size_t>(a)] > scaled[static_cast<size_t>(b)];
  });
  int64_t keep = vocab;
  if (sampler.top_k > 0) keep = std::min(keep, sampler.top_k);

  const double mx = scaled[static_cast<size_t>(order[0])];
  std::vector<double> probs(static_cast<size_t>(vocab), 0.0);
  double total = 0.0;
  for (int64_t r = 0; r < keep; ++r) {
    const double e = std::exp(scaled[static_cast<size_t>(order[r])] - mx);
    probs[static_cast<size_t>(order[r])] = e;
    total += e;
  }
  if (sampler.top_p < T(1)) {
    double cum = 0.0;
    int64_t cut = keep;
    for (int64_t r = 0; r < keep; ++r) {
      cum += probs[static_cast<size_t>(order[r])] / total;
      if (cum >= static_cast<double>(sampler.top_p)) {
        cut = r + 1;
        break;
      }
    }
    for (int64_t r = cut; r < keep; ++r) probs[static_cast<size_t>(order[r])] = 0.0;
    total = 0.0;
    for (double pv : probs) total += pv;
  }
  // categorical draw in fixed index order
  const double u = rng.uniform() * total;
  double cum = 0.0;
  for (int64_t v = 0; v < vocab; ++v) {
    cum += probs[static_cast<size_t>(v)];
    if (u < cum) return v;
  }
  for (int64_t v = vocab - 1; v >= 0; --v) {
    if (probs[static_cast<size_t>(v)] > 0.0) return v;
  }
  return 0;
}

}  // namespace detail

// Where classifier-free guidance mixes: the conditioning embedding
// (default, Eq. 11) or the per-position logits.
enum class CfgSpace { kEmbedding, kLogits };

inline CfgSpace parse_cfg_space(const std::string& name) {
  if (name == "embedding") return CfgSpace::kEmbedding;
  if (name == "logits") return CfgSpace::kLogits;
  throw std::invalid_argument("cfg_space: expected embedding|logits, got \"" +
                              name + "\"");
}

// Next-scale decoding: every position of scale k is computed in parallel
// from the committed prefix, filtered, then drawn in fixed position order.
// When `cond_negative` is non-null, per-scale logits are mixed as
// (1+t)*L_cond - t*L_negative before filtering (logit-space guidance).
template <typename T>
MultiScaleTokens sample(const VarParams<T>& p, const Tensor<T>& cond_guided,
                        const T* codebook, const PhiRaw<T>* phi,
                        const SamplerConfig<T>& sampler, uint64_t seed,
                        const Tensor<T>* cond_negative = nullptr,
                        T guidance_t = T(0)) {
  const auto& config = p.config;
  sampler.validate(config.vocab);
  const ScaleSchedule& schedule = config.schedule;
  const int64_t fh = schedule.final_h();
  const int64_t fw = schedule.final_w();
  const int64_t code_dim = config.code_dim;
  Rng rng(seed);
  NoGradGuard no_grad;

  Tensor<T> cond = reshape(cond_guided, {1, config.text_dim});
  Tensor<T> cond_neg;
  if (cond_negative != nullptr) {
    cond_neg = reshape(*cond_negative, {1, config.text_dim});
  }
  MultiScaleTokens tokens;
  std::vector<T> acc(static_cast<size_t>(code_dim * fh * fw), T(0));
  std::vector<std::vector<std::vector<T>>> contexts(1);
  contexts[0].emplace_back();  // scale 0 has no prefix

  for (int64_t k = 0; k < schedule.num_scales(); ++k) {
    const auto& [h, w] = schedule.sizes[static_cast<size_t>(k)];
    if (k > 0) {
      std::vector<T> down(static_cast<size_t>(code_dim * h * w));
      kernels::interp_chw(acc.data(), code_dim, fh, fw, down.data(), h, w,
                          InterpMode::kArea);
      std::vector<T> ctx(static_cast<size_t>(h * w * code_dim));
      for (int64_t pos = 0; pos < h * w; ++pos) {
        for (int64_t c = 0; c < code_dim; ++c) {
          ctx[pos * code_dim + c] = down[c * h * w + pos];
        }
      }
      contexts[0].push_back(std::move(ctx));
    }
    // placeholder targets keep the teacher-forced path reusable; the NLL
    // computed against them is ignored
    std::vector<MultiScaleTokens> batch_tokens(1);
    batch_tokens[0] = tokens;
    batch_tokens[0].maps.emplace_back(static_cast<size_t>(h * w), 0);

    VarForwardResult<T> fwd =
        forward_teacher_forced(p, batch_tokens, cond, contexts, k + 1);
    int64_t first_row = 0;
    for (int64_t j = 0; j < k; ++j) first_row += schedule.tokens_at(j);

    std::vector<T> mixed;
    if (cond_neg.defined()) {
      VarForwardResult<T> fwd_neg =
          forward_teacher_forced(p, batch_tokens, cond_neg, contexts, k + 1);
      mixed.resize(static_cast<size_t>(h * w * config.vocab));
      const T* c_rows = fwd.logits.data() + first_row * config.vocab;
      const T* n_rows = fwd_neg.logits.data() + first_row * config.vocab;
      for (size_t i = 0; i < mixed.size(); ++i) {
        mixed[i] = (T(1) + guidance_t) * c_rows[i] - guidance_t * n_rows[i];
      }
    }

    std::vector<int64_t> drawn(static_cast<size_t>(h * w));
    for (int64_t pos = 0; pos < h * w; ++pos) {
      const T* row =
          mixed.empty()
              ? fwd.logits.data() + (first_row + pos) * config.vocab
              : mixed.data() + pos * config.vocab;
      drawn[static_cast<size_t>(pos)] =
          detail::sample_from_logits(row, config.vocab, sampler, rng);
    }
    tokens.maps.push_back(std::move(drawn));

    if (k < schedule.num_scales() - 1) {
      const std::vector<T> contribution = detail::scale_contribution(
          tokens.maps.back(), h, w, fh, fw, codebook, code_dim, phi);
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += contribution[i];
    }
  }
  return tokens;
}

}  // namespace nextscale
