#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nextscale/ops.hpp"
#include "nextscale/rng.hpp"
#include "nextscale/tensor.hpp"

namespace nextscale {

// ---------------------------------------------------------------------------
// tokenization: lowercase word-level against a fixed built-in vocabulary

inline constexpr int64_t kSotId = 0;
inline constexpr int64_t kEotId = 1;
inline constexpr int64_t kUnkId = 2;

inline const std::vector<std::string>& builtin_vocabulary() {
  static const std::vector<std::string> words = {
      "<sot>", "<eot>",   "<unk>",  "a",      "an",    "the",    "on",
      "in",    "of",      "photo",  "image",  "red",   "green",  "blue",
      "yellow", "square", "circle", "black",  "white", "background",
      "small", "large",   "bright", "dark",   "with",  "and"};
  return words;
}

inline int64_t vocab_lookup(const std::string& word) {
  const auto& vocab = builtin_vocabulary();
  for (size_t i = 3; i < vocab.size(); ++i) {
    if (vocab[i] == word) return static_cast<int64_t>(i);
  }
  return kUnkId;
}

// SOT ++ words ++ EOT, truncated to max_len with EOT always retained.
inline std::vector<int64_t> tokenize(const std::string& text,
                                     int64_t max_len = 77) {
  std::vector<int64_t> ids = {kSotId};
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      ids.push_back(vocab_lookup(word));
      word.clear();
    }
  };
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      flush();
    }
  }
  flush();
  if (static_cast<int64_t>(ids.size()) >= max_len) {
    ids.resize(static_cast<size_t>(max_len - 1));
  }
  ids.push_back(kEotId);
  return ids;
}

inline std::string detokenize(const std::vector<int64_t>& ids) {
  const auto& vocab = builtin_vocabulary();
  std::string out;
  for (int64_t id : ids) {
    if (id == kSotId || id == kEotId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab[static_cast<size_t>(id)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// toy causal transformer encoder (CLIP-style EOT pooling)

template <typename T>
struct TextEncoderConfig {
  int64_t width = 64;
  int64_t heads = 4;
  int64_t depth = 2;
  int64_t max_len = 77;
};

template <typename T>
struct TextEncoderLayer {
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct TextEncoderParams {
  TextEncoderConfig<T> config;
  Tensor<T> tok_emb;  // (vocab, D)
  Tensor<T> pos_emb;  // (max_len, D)
  std::vector<TextEncoderLayer<T>> layers;
  Tensor<T> lnf_g, lnf_b;

  std::vector<std::pair<std::string, Tensor<T>>> named() {
    std::vector<std::pair<std::string, Tensor<T>>> out = {
        {"text.tok_emb", tok_emb}, {"text.pos_emb", pos_emb}};
    for (size_t l = 0; l < layers.size(); ++l) {
      auto& lay = layers[l];
      const std::string p = "text.layer" + std::to_string(l) + ".";
      out.insert(out.end(),
                 {{p + "ln1_g", lay.ln1_g}, {p + "ln1_b", lay.ln1_b},
                  {p + "wq", lay.wq},       {p + "bq", lay.bq},
                  {p + "wk", lay.wk},       {p + "bk", lay.bk},
                  {p + "wv", lay.wv},       {p + "bv", lay.bv},
                  {p + "wo", lay.wo},       {p + "bo", lay.bo},
                  {p + "ln2_g", lay.ln2_g}, {p + "ln2_b", lay.ln2_b},
                  {p + "w1", lay.w1},       {p + "b1", lay.b1},
                  {p + "w2", lay.w2},       {p + "b2", lay.b2}});
    }
    out.emplace_back("text.lnf_g", lnf_g);
    out.emplace_back("text.lnf_b", lnf_b);
    return out;
  }
};

namespace detail {

template <typename T>
Tensor<T> dense_init(Rng& rng, Shape shape, T std_dev) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.normal()) * std_dev;
  return t;
}

}  // namespace detail

template <typename T>
TextEncoderParams<T> init_text_encoder(const TextEncoderConfig<T>& config,
                                       uint64_t seed) {
  Rng rng(seed);
  const int64_t d = config.width;
  const T std_dev = T(0.08);
  TextEncoderParams<T> p;
  p.config = config;
  const int64_t vocab = static_cast<int64_t>(builtin_vocabulary().size());
  p.tok_emb = detail::dense_init<T>(rng, {vocab, d}, std_dev);
  p.pos_emb = detail::dense_init<T>(rng, {config.max_len, d}, std_dev);
  for (int64_t l = 0; l < config.depth; ++l) {
    TextEncoderLayer<T> lay;
    lay.ln1_g = Tensor<T>::full({d}, T(1));
    lay.ln1_b = Tensor<T>::zeros({d});
    lay.ln2_g = Tensor<T>::full({d}, T(1));
    lay.ln2_b = Tensor<T>::zeros({d});
    lay.wq = detail::dense_init<T>(rng, {d, d}, std_dev);
    lay.bq = Tensor<T>::zeros({d});
    lay.wk = detail::dense_init<T>(rng, {d, d}, std_dev);
    lay.bk = Tensor<T>::zeros({d});
    lay.wv = detail::dense_init<T>(rng, {d, d}, std_dev);
    lay.bv = Tensor<T>::zeros({d});
    lay.wo = detail::dense_init<T>(rng, {d, d}, std_dev);
    lay.bo = Tensor<T>::zeros({d});
    lay.w1 = detail::dense_init<T>(rng, {d, 4 * d}, std_dev);
    lay.b1 = Tensor<T>::zeros({4 * d});
    lay.w2 = detail::dense_init<T>(rng, {4 * d, d}, std_dev);
    lay.b2 = Tensor<T>::zeros({d});
    p.layers.push_back(std::move(lay));
  }
  p.lnf_g = Tensor<T>::full({d}, T(1));
  p.lnf_b = Tensor<T>::zeros({d});
  return p;
}

// Per-layer attention from the final (EOT) query to every key position,
// averaged over heads.
template <typename T>
struct PositionScoreReport {
  std::vector<std::vector<T>> layer_scores;  // (depth, n)
};

namespace detail {

template <typename T>
Tensor<T> causal_mask_2d(int64_t s) {
  Tensor<T> mask = Tensor<T>::zeros({s, s});
  for (int64_t i = 0; i < s; ++i) {
    for (int64_t j = i + 1; j < s; ++j) {
      mask.values()[static_cast<size_t>(i * s + j)] =
          -std::numeric_limits<T>::infinity();
    }
  }
  return mask;
}

// x: (S,D). When `record` is non-null, appends the head-averaged attention
// row of the final query position.
template <typename T>
Tensor<T> text_attention(const TextEncoderLayer<T>& lay, const Tensor<T>& x,
                         int64_t heads, const Tensor<T>& mask,
                         std::vector<std::vector<T>>* record) {
  const int64_t s = x.shape()[0];
  const int64_t d = x.shape()[1];
  const int64_t dh = d / heads;
  auto split = [&](const Tensor<T>& t) {
    return permute(reshape(t, {s, heads, dh}), {1, 0, 2});  // (H,S,dh)
  };
  Tensor<T> q = split(linear(x, lay.wq, lay.bq));
  Tensor<T> k = split(linear(x, lay.wk, lay.bk));
  Tensor<T> v = split(linear(x, lay.wv, lay.bv));
  Tensor<T> scores = mul_scalar(batched_matmul(q, k, /*trans_b=*/true),
                                T(1) / std::sqrt(static_cast<T>(dh)));
  scores = add(scores, mask);
  Tensor<T> probs = softmax(scores);  // (H,S,S)
  if (record != nullptr) {
    std::vector<T> row(static_cast<size_t>(s), T(0));
    for (int64_t h = 0; h < heads; ++h) {
      const T* p = probs.data() + (h * s + (s - 1)) * s;
      for (int64_t j = 0; j < s; ++j) row[static_cast<size_t>(j)] += p[j];
    }
    for (T& vr : row) vr /= static_cast<T>(heads);
    record->push_back(std::move(row));
  }
  Tensor<T> ctx = batched_matmul(probs, v);                  // (H,S,dh)
  ctx = reshape(permute(ctx, {1, 0, 2}), {s, d});
  return linear(ctx, lay.wo, lay.bo);
}

template <typename T>
Tensor<T> text_forward(const TextEncoderParams<T>& p, const Tensor<T>& input,
                       std::vector<std::vector<T>>* record) {
  const int64_t s = input.shape()[0];
  Tensor<T> mask = causal_mask_2d<T>(s);
  Tensor<T> x = input;
  for (const auto& lay : p.layers) {
    Tensor<T> h = add(mul(layernorm(x), lay.ln1_g), lay.ln1_b);
    x = add(x, text_attention(lay, h, p.config.heads, mask, record));
    h = add(mul(layernorm(x), lay.ln2_g), lay.ln2_b);
    h = matmul(gelu(linear(h, lay.w1, lay.b1)), lay.w2);
    x = add(x, add(h, lay.b2));
  }
  return add(mul(layernorm(x), p.lnf_g), p.lnf_b);
}

}  // namespace detail

// The conditioning embedding: hidden state at the EOT position.
template <typename T>
Tensor<T> encode_text(const TextEncoderParams<T>& p,
                      const std::vector<int64_t>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty tokens");
  if (static_cast<int64_t>(tokens.size()) > p.config.max_len) {
    throw std::invalid_argument("encode_text: sequence longer than max_len");
  }
  const int64_t s = static_cast<int64_t>(tokens.size());
  std::vector<int64_t> positions(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int64_t>(i);
  Tensor<T> input = add(embedding_lookup(p.tok_emb, tokens),
                        embedding_lookup(p.pos_emb, positions));
  Tensor<T> out = detail::text_forward(
      p, input, static_cast<std::vector<std::vector<T>>*>(nullptr));
  return reshape(narrow(out, 0, s - 1, 1), {p.config.width});
}

// Feeds n identical input embeddings (positional embeddings still applied)
// and reports each layer's final-query attention distribution.
template <typename T>
PositionScoreReport<T> position_scores(const TextEncoderParams<T>& p,
                                       int64_t n) {
  if (n < 1 || n > p.config.max_len) {
    throw std::invalid_argument("position_scores: probe length " +
                                std::to_string(n) + " out of [1," +
                                std::to_string(p.config.max_len) + "]");
  }
  std::vector<int64_t> probe(static_cast<size_t>(n), kUnkId);
  std::vector<int64_t> positions(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
  Tensor<T> input = add(embedding_lookup(p.tok_emb, probe),
                        embedding_lookup(p.pos_emb, positions));
  PositionScoreReport<T> report;
  detail::text_forward(p, input, &report.layer_scores);
  return report;
}

}  // namespace nextscale
