#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nextscale/gemm.hpp"
#include "nextscale/kernels.hpp"
#include "nextscale/ops.hpp"
#include "nextscale/rng.hpp"
#include "nextscale/schedule.hpp"
#include "nextscale/tensor.hpp"

namespace nextscale {

// K token maps of codebook indices, map k flattened row-major at h_k x w_k.
struct MultiScaleTokens {
  std::vector<std::vector<int64_t>> maps;

  int64_t num_scales() const { return static_cast<int64_t>(maps.size()); }

  std::vector<int64_t> flat() const {
    std::vector<int64_t> out;
    for (const auto& m : maps) out.insert(out.end(), m.begin(), m.end());
    return out;
  }
};

template <typename T>
struct TokenizerConfig {
  int64_t vocab_size = 32;     // V
  int64_t code_dim = 16;       // C
  int64_t hidden = 32;         // conv channels in encoder/decoder
  int64_t image_size = 32;
  ScaleSchedule schedule = default_schedule();
  bool pin_zero_code = true;
  bool phi_conv = false;       // shared 3x3 refinement conv instead of identity
  T lambda_p = T(0);           // edge-map perceptual proxy weight
  T beta_commit = T(0.25);
};

// Shared per-scale refinement convolution in raw-array form (identity when
// null / disabled).
template <typename T>
struct PhiRaw {
  const T* weight = nullptr;  // (C,C,3,3)
  const T* bias = nullptr;    // (C)
  int64_t channels = 0;

  bool enabled() const { return weight != nullptr; }
};

// ---------------------------------------------------------------------------
// quantization

// Nearest code by (squared) Euclidean distance; ties break to the lowest
// index. Returns the winning row of the codebook.
template <typename T>
int64_t quantize_index(const T* feature, const T* codebook, int64_t vocab,
                       int64_t code_dim) {
  if (vocab < 1) throw std::invalid_argument("quantize: empty codebook");
  int64_t best = 0;
  T best_dist = 0;
  for (int64_t v = 0; v < vocab; ++v) {
    const T* row = codebook + v * code_dim;
    T dist = 0;
    for (int64_t c = 0; c < code_dim; ++c) {
      const T d = row[c] - feature[c];
      dist += d * d;
    }
    if (v == 0 || dist < best_dist) {
      best = v;
      best_dist = dist;
    }
  }
  return best;
}

template <typename T>
std::pair<int64_t, std::vector<T>> quantize(const std::vector<T>& feature,
                                            const Tensor<T>& codebook) {
  if (codebook.dim() != 2 ||
      codebook.shape()[1] != static_cast<int64_t>(feature.size())) {
    throw std::invalid_argument("quantize: feature dim " +
                                std::to_string(feature.size()) +
                                " vs codebook " + shape_str(codebook.shape()));
  }
  const int64_t v = codebook.shape()[0];
  const int64_t c = codebook.shape()[1];
  const int64_t idx = quantize_index(feature.data(), codebook.data(), v, c);
  std::vector<T> code(codebook.data() + idx * c, codebook.data() + (idx + 1) * c);
  return {idx, std::move(code)};
}

// ---------------------------------------------------------------------------
// raw (non-autodiff) multi-scale residual coding

namespace detail {

template <typename T>
void apply_phi_raw(const PhiRaw<T>& phi, const T* in, int64_t h, int64_t w,
                   T* out) {
  const int64_t c = phi.channels;
  const int64_t krows = c * 9;
  const int64_t ncols = h * w;
  std::vector<T> col(static_cast<size_t>(krows * ncols));
  kernels::im2col3x3(in, c, h, w, /*stride=*/1, col.data());
  gemm(false, false, c, ncols, krows, T(1), phi.weight, krows, col.data(),
       ncols, T(0), out, ncols);
  for (int64_t ch = 0; ch < c; ++ch) {
    const T b = phi.bias[ch];
    for (int64_t i = 0; i < ncols; ++i) out[ch * ncols + i] += b;
  }
}

// Contribution of one token map to the full-resolution reconstruction:
// phi(bilinear_upsample(lookup(codebook, tokens))).
template <typename T>
std::vector<T> scale_contribution(const std::vector<int64_t>& tokens,
                                  int64_t h, int64_t w, int64_t full_h,
                                  int64_t full_w, const T* codebook,
                                  int64_t code_dim, const PhiRaw<T>* phi) {
  std::vector<T> small(static_cast<size_t>(code_dim * h * w));
  for (int64_t p = 0; p < h * w; ++p) {
    const T* code = codebook + tokens[static_cast<size_t>(p)] * code_dim;
    for (int64_t c = 0; c < code_dim; ++c) small[c * h * w + p] = code[c];
  }
  std::vector<T> up(static_cast<size_t>(code_dim * full_h * full_w));
  kernels::interp_chw(small.data(), code_dim, h, w, up.data(), full_h, full_w,
                      InterpMode::kBilinear);
  if (phi && phi->enabled()) {
    std::vector<T> refined(up.size());
    apply_phi_raw(*phi, up.data(), full_h, full_w, refined.data());
    return refined;
  }
  return up;
}

}  // namespace detail

template <typename T>
struct EncodeResult {
  MultiScaleTokens tokens;
  std::vector<T> approx;  // running reconstruction, (C, h_K, w_K)
};

// Residual encode: repeatedly quantize the downsampled residual and
// subtract each scale's upsampled contribution.
template <typename T>
EncodeResult<T> multi_scale_encode(const T* feature, int64_t code_dim,
                                   const ScaleSchedule& schedule,
                                   const T* codebook, int64_t vocab,
                                   const PhiRaw<T>* phi = nullptr) {
  schedule.validate();
  const int64_t fh = schedule.final_h();
  const int64_t fw = schedule.final_w();
  const int64_t plane = fh * fw;

  EncodeResult<T> result;
  result.approx.assign(static_cast<size_t>(code_dim * plane), T(0));
  std::vector<T> residual(feature, feature + code_dim * plane);
  std::vector<T> position(static_cast<size_t>(code_dim));

  for (const auto& [h, w] : schedule.sizes) {
    std::vector<T> down(static_cast<size_t>(code_dim * h * w));
    kernels::interp_chw(residual.data(), code_dim, fh, fw, down.data(), h, w,
                        InterpMode::kArea);
    std::vector<int64_t> tokens(static_cast<size_t>(h * w));
    for (int64_t p = 0; p < h * w; ++p) {
      for (int64_t c = 0; c < code_dim; ++c) {
        position[static_cast<size_t>(c)] = down[c * h * w + p];
      }
      tokens[static_cast<size_t>(p)] =
          quantize_index(position.data(), codebook, vocab, code_dim);
    }
    const std::vector<T> contribution = detail::scale_contribution(
        tokens, h, w, fh, fw, codebook, code_dim, phi);
    for (size_t i = 0; i < contribution.size(); ++i) {
      result.approx[i] += contribution[i];
      residual[i] -= contribution[i];
    }
    result.tokens.maps.push_back(std::move(tokens));
  }
  return result;
}

template <typename T>
EncodeResult<T> multi_scale_encode(const Tensor<T>& feature,
                                   const ScaleSchedule& schedule,
                                   const Tensor<T>& codebook,
                                   const PhiRaw<T>* phi = nullptr) {
  const int64_t c = codebook.shape()[1];
  if (feature.dim() != 3 || feature.shape()[0] != c ||
      feature.shape()[1] != schedule.final_h() ||
      feature.shape()[2] != schedule.final_w()) {
    throw std::invalid_argument("multi_scale_encode: feature " +
                                shape_str(feature.shape()) +
                                " does not match schedule/codebook");
  }
  return multi_scale_encode(feature.data(), c, schedule, codebook.data(),
                            codebook.shape()[0], phi);
}

// Raw decode: sum of per-scale contributions, same accumulation order as
// the encoder's running approximation.
template <typename T>
std::vector<T> multi_scale_decode_raw(const MultiScaleTokens& tokens,
                                      const ScaleSchedule& schedule,
                                      const T* codebook, int64_t vocab,
                                      int64_t code_dim,
                                      const PhiRaw<T>* phi = nullptr) {
  schedule.validate();
  if (tokens.num_scales() != schedule.num_scales()) {
    throw std::invalid_argument("multi_scale_decode: " +
                                std::to_string(tokens.num_scales()) +
                                " maps vs " +
                                std::to_string(schedule.num_scales()) +
                                " scales");
  }
  const int64_t fh = schedule.final_h();
  const int64_t fw = schedule.final_w();
  std::vector<T> out(static_cast<size_t>(code_dim * fh * fw), T(0));
  for (int64_t k = 0; k < schedule.num_scales(); ++k) {
    const auto& [h, w] = schedule.sizes[static_cast<size_t>(k)];
    const auto& map = tokens.maps[static_cast<size_t>(k)];
    if (static_cast<int64_t>(map.size()) != h * w) {
      throw std::invalid_argument("multi_scale_decode: map " +
                                  std::to_string(k) + " has wrong size");
    }
    for (int64_t id : map) {
      if (id < 0 || id >= vocab) {
        throw std::out_of_range("multi_scale_decode: token " +
                                std::to_string(id) + " out of range [0," +
                                std::to_string(vocab) + ")");
      }
    }
    const std::vector<T> contribution = detail::scale_contribution(
        map, h, w, fh, fw, codebook, code_dim, phi);
    for (size_t i = 0; i < out.size(); ++i) out[i] += contribution[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// learnable tokenizer (conv autoencoder around the residual quantizer)

template <typename T>
struct TokenizerParams {
  TokenizerConfig<T> config;

  Tensor<T> enc_w1, enc_b1, enc_w2, enc_b2, enc_w3, enc_b3;
  Tensor<T> dec_w0, dec_b0, dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3;
  Tensor<T> codebook;        // (V, C)
  Tensor<T> phi_w, phi_b;    // shared refinement conv, only when phi_conv

  std::vector<std::pair<std::string, Tensor<T>>> named() {
    std::vector<std::pair<std::string, Tensor<T>>> out = {
        {"enc.w1", enc_w1}, {"enc.b1", enc_b1}, {"enc.w2", enc_w2},
        {"enc.b2", enc_b2}, {"enc.w3", enc_w3}, {"enc.b3", enc_b3},
        {"dec.w0", dec_w0}, {"dec.b0", dec_b0}, {"dec.w1", dec_w1},
        {"dec.b1", dec_b1}, {"dec.w2", dec_w2}, {"dec.b2", dec_b2},
        {"dec.w3", dec_w3}, {"dec.b3", dec_b3}, {"codebook", codebook}};
    if (config.phi_conv) {
      out.emplace_back("phi.w", phi_w);
      out.emplace_back("phi.b", phi_b);
    }
    return out;
  }

  PhiRaw<T> phi_raw() const {
    PhiRaw<T> phi;
    if (config.phi_conv) {
      phi.weight = phi_w.data();
      phi.bias = phi_b.data();
      phi.channels = config.code_dim;
    }
    return phi;
  }

  void set_requires_grad(bool on) {
    for (auto& [name, t] : named()) t.set_requires_grad(on);
  }
};

namespace detail {

template <typename T>
Tensor<T> conv_init(Rng& rng, int64_t cout, int64_t cin) {
  const T std_dev = std::sqrt(T(2) / static_cast<T>(cin * 9));
  Tensor<T> w = Tensor<T>::zeros({cout, cin, 3, 3}, /*requires_grad=*/true);
  for (T& v : w.values()) v = static_cast<T>(rng.normal()) * std_dev;
  return w;
}

}  // namespace detail

template <typename T>
TokenizerParams<T> init_tokenizer_params(const TokenizerConfig<T>& config,
                                         uint64_t seed) {
  config.schedule.validate();
  Rng rng(seed);
  TokenizerParams<T> p;
  p.config = config;
  const int64_t hid = config.hidden;
  const int64_t c = config.code_dim;

  p.enc_w1 = detail::conv_init<T>(rng, hid, 3);
  p.enc_b1 = Tensor<T>::zeros({hid}, true);
  p.enc_w2 = detail::conv_init<T>(rng, hid, hid);
  p.enc_b2 = Tensor<T>::zeros({hid}, true);
  p.enc_w3 = detail::conv_init<T>(rng, c, hid);
  p.enc_b3 = Tensor<T>::zeros({c}, true);

  p.dec_w0 = detail::conv_init<T>(rng, hid, c);
  p.dec_b0 = Tensor<T>::zeros({hid}, true);
  p.dec_w1 = detail::conv_init<T>(rng, hid, hid);
  p.dec_b1 = Tensor<T>::zeros({hid}, true);
  p.dec_w2 = detail::conv_init<T>(rng, hid, hid);
  p.dec_b2 = Tensor<T>::zeros({hid}, true);
  p.dec_w3 = detail::conv_init<T>(rng, 3, hid);
  p.dec_b3 = Tensor<T>::zeros({3}, true);

  p.codebook = Tensor<T>::zeros({config.vocab_size, c}, true);
  const T code_std = T(1) / std::sqrt(static_cast<T>(c));
  for (T& v : p.codebook.values()) v = static_cast<T>(rng.normal()) * code_std;
  if (config.pin_zero_code) {
    for (int64_t i = 0; i < c; ++i) p.codebook.values()[static_cast<size_t>(i)] = T(0);
  }

  if (config.phi_conv) {
    // start close to identity so early training matches the phi-less path
    p.phi_w = Tensor<T>::zeros({c, c, 3, 3}, true);
    for (int64_t ch = 0; ch < c; ++ch) {
      p.phi_w.values()[static_cast<size_t>(((ch * c + ch) * 3 + 1) * 3 + 1)] = T(1);
    }
    p.phi_b = Tensor<T>::zeros({c}, true);
  }
  return p;
}

// images: (B,3,S,S) -> feature (B,C,S/4,S/4)
template <typename T>
Tensor<T> encoder_forward(const TokenizerParams<T>& p, const Tensor<T>& images) {
  Tensor<T> x = relu(conv3x3(images, p.enc_w1, p.enc_b1, /*stride=*/2));
  x = relu(conv3x3(x, p.enc_w2, p.enc_b2, /*stride=*/2));
  return conv3x3(x, p.enc_w3, p.enc_b3, /*stride=*/1);
}

template <typename T>
Tensor<T> decoder_forward(const TokenizerParams<T>& p, const Tensor<T>& fhat) {
  const int64_t h = fhat.shape()[2], w = fhat.shape()[3];
  Tensor<T> x = relu(conv3x3(fhat, p.dec_w0, p.dec_b0));
  x = interpolate(x, h * 2, w * 2, InterpMode::kNearest);
  x = relu(conv3x3(x, p.dec_w1, p.dec_b1));
  x = interpolate(x, h * 4, w * 4, InterpMode::kNearest);
  x = relu(conv3x3(x, p.dec_w2, p.dec_b2));
  return conv3x3(x, p.dec_w3, p.dec_b3);
}

// Differentiable decode for a batch of token sets; grads reach the
// codebook (and phi when enabled).
template <typename T>
Tensor<T> multi_scale_decode_batch(const std::vector<MultiScaleTokens>& tokens,
                                   const ScaleSchedule& schedule,
                                   const Tensor<T>& codebook,
                                   const Tensor<T>* phi_w = nullptr,
                                   const Tensor<T>* phi_b = nullptr) {
  schedule.validate();
  const int64_t batch = static_cast<int64_t>(tokens.size());
  const int64_t c = codebook.shape()[1];
  const int64_t fh = schedule.final_h();
  const int64_t fw = schedule.final_w();

  Tensor<T> acc;
  for (int64_t k = 0; k < schedule.num_scales(); ++k) {
    const auto& [h, w] = schedule.sizes[static_cast<size_t>(k)];
    std::vector<int64_t> ids;
    ids.reserve(static_cast<size_t>(batch * h * w));
    for (const auto& t : tokens) {
      const auto& map = t.maps[static_cast<size_t>(k)];
      ids.insert(ids.end(), map.begin(), map.end());
    }
    Tensor<T> codes = embedding_lookup(codebook, ids);   // (B*h*w, C)
    codes = reshape(codes, {batch, h, w, c});
    codes = permute(codes, {0, 3, 1, 2});                // (B,C,h,w)
    Tensor<T> up = interpolate(codes, fh, fw, InterpMode::kBilinear);
    if (phi_w != nullptr) up = conv3x3(up, *phi_w, *phi_b);
    acc = acc.defined() ? add(acc, up) : up;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// loss

namespace detail {

// Squared Sobel gradient magnitude of the channel-mean image; a crude
// stand-in for a perceptual distance.
template <typename T>
Tensor<T> edge_map(const Tensor<T>& images) {
  const int64_t b = images.shape()[0], ch = images.shape()[1],
                h = images.shape()[2], w = images.shape()[3];
  // grayscale via channel mean: (B,1,H,W)
  Tensor<T> gray;
  for (int64_t c = 0; c < ch; ++c) {
    Tensor<T> plane = narrow(images, 1, c, 1);
    gray = gray.defined() ? add(gray, plane) : plane;
  }
  gray = mul_scalar(gray, T(1) / static_cast<T>(ch));
  (void)b;
  (void)h;
  (void)w;
  static const std::vector<T> sobel_x = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static const std::vector<T> sobel_y = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  Tensor<T> kx = Tensor<T>::from_values({1, 1, 3, 3}, sobel_x);
  Tensor<T> ky = Tensor<T>::from_values({1, 1, 3, 3}, sobel_y);
  Tensor<T> zero_bias = Tensor<T>::zeros({1});
  Tensor<T> gx = conv3x3(gray, kx, zero_bias);
  Tensor<T> gy = conv3x3(gray, ky, zero_bias);
  return add(mul(gx, gx), mul(gy, gy));
}

}  // namespace detail

// Reconstruction + codebook + commitment (stop-gradient split) + optional
// edge-proxy perceptual term.
template <typename T>
Tensor<T> tokenizer_loss(const Tensor<T>& images, const Tensor<T>& recon,
                         const Tensor<T>& z_e, const Tensor<T>& z_q,
                         T lambda_p, T beta_commit) {
  Tensor<T> loss = mse(images, recon);
  loss = add(loss, mse(detach(z_e), z_q));
  loss = add(loss, mul_scalar(mse(z_e, detach(z_q)), beta_commit));
  if (lambda_p != T(0)) {
    Tensor<T> edge_term = mse(detail::edge_map(recon), detail::edge_map(images));
    loss = add(loss, mul_scalar(edge_term, lambda_p));
  }
  return loss;
}

// Straight-through estimator: forward carries z_q, backward routes the
// decoder gradient into the encoder feature.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& z_e, const Tensor<T>& z_q) {
  return add(z_e, detach(sub(z_q, z_e)));
}

// ---------------------------------------------------------------------------
// monitoring

struct CodebookHealth {
  std::vector<int64_t> counts;
  double perplexity = 0.0;
};

inline CodebookHealth codebook_health(const std::vector<MultiScaleTokens>& batch,
                                      int64_t vocab) {
  if (batch.empty() || batch.front().maps.empty()) {
    throw std::invalid_argument("codebook_health: need at least one token map");
  }
  CodebookHealth health;
  health.counts.assign(static_cast<size_t>(vocab), 0);
  int64_t total = 0;
  for (const auto& tokens : batch) {
    for (const auto& map : tokens.maps) {
      for (int64_t id : map) {
        ++health.counts[static_cast<size_t>(id)];
        ++total;
      }
    }
  }
  double entropy = 0.0;
  for (int64_t c : health.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  health.perplexity = std::exp(entropy);
  return health;
}

// Context features for next-scale prediction: for each scale k >= 1, the
// running approximation of scales < k area-downsampled to (h_k, w_k),
// laid out position-major as (h_k*w_k, C).
template <typename T>
std::vector<std::vector<T>> scale_context_features(
    const MultiScaleTokens& tokens, const ScaleSchedule& schedule,
    const T* codebook, int64_t code_dim, const PhiRaw<T>* phi = nullptr) {
  const int64_t fh = schedule.final_h();
  const int64_t fw = schedule.final_w();
  const int64_t plane = fh * fw;
  std::vector<T> acc(static_cast<size_t>(code_dim * plane), T(0));

  std::vector<std::vector<T>> contexts;
  contexts.emplace_back();  // scale 0 has no prefix
  for (int64_t k = 0; k < schedule.num_scales(); ++k) {
    const auto& [h, w] = schedule.sizes[static_cast<size_t>(k)];
    if (k > 0) {
      std::vector<T> down(static_cast<size_t>(code_dim * h * w));
      kernels::interp_chw(acc.data(), code_dim, fh, fw, down.data(), h, w,
                          InterpMode::kArea);
      std::vector<T> ctx(static_cast<size_t>(h * w * code_dim));
      for (int64_t p = 0; p < h * w; ++p) {
        for (int64_t c = 0; c < code_dim; ++c) {
          ctx[p * code_dim + c] = down[c * h * w + p];
        }
      }
      contexts.push_back(std::move(ctx));
    }
    if (k < schedule.num_scales() - 1) {
      const std::vector<T> contribution = detail::scale_contribution(
          tokens.maps[static_cast<size_t>(k)], h, w, fh, fw, codebook,
          code_dim, phi);
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += contribution[i];
    }
  }
  return contexts;
}

}  // namespace nextscale
