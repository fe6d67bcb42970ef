// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 8 performs the full desk-scale reference run and
// criterion 9 reuses its checkpoints, so a complete pass takes ~25 minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "nextscale/pipeline.hpp"
#include "reference_coding.hpp"

using namespace nextscale;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass,
            const std::string& detail) {
  std::ostringstream line;
  line << "criterion " << number << " [" << name << "]: "
       << (pass ? "PASS" : "FAIL");
  if (!detail.empty()) line << " (" << detail << ")";
  std::cout << line.str() << std::endl;
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(4);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------

void criterion_1_autodiff() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  auto check = [&](const std::function<double()>& one_instance) {
    for (int i = 0; i < 20; ++i) worst = std::max(worst, one_instance());
  };
  using gradcheck::max_rel_error;
  using gradcheck::random_tensor;

  check([&] {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {3, 4});
    auto row = random_tensor(rng, {4});
    return max_rel_error({a, b, row}, [&] {
      auto x = mul(add(a, b), sub(a, row));
      x = add_scalar(mul_scalar(x, 0.7), 0.3);
      return sum_all(mul(x, gelu(x)));
    });
  });
  check([&] {
    auto a = random_tensor(rng, {2, 6});
    return max_rel_error({a}, [&] {
      auto x = relu(add_scalar(a, 0.05));
      return mean_all(mul(x, x));
    });
  });
  check([&] {
    auto a = random_tensor(rng, {3, 4});
    return max_rel_error({a}, [&] {
      auto x = reshape(permute(a, {1, 0}), {2, 6});
      auto y = narrow(x, 1, 1, 4);
      return sum_all(mul(y, y));
    });
  });
  check([&] {
    auto a = random_tensor(rng, {2, 3});
    auto b = random_tensor(rng, {2, 3});
    return max_rel_error({a, b}, [&] {
      auto c = concat<double>({a, b}, 0);
      return sum_all(mul(c, c));
    });
  });
  check([&] {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 5});
    auto bias = random_tensor(rng, {5});
    return max_rel_error({a, b, bias}, [&] {
      auto y = linear(a, b, bias);
      return sum_all(mul(y, y));
    });
  });
  check([&] {
    auto x = random_tensor(rng, {2, 3, 4});
    auto y = random_tensor(rng, {2, 4, 3});
    return max_rel_error({x, y}, [&] {
      auto c = batched_matmul(x, y);
      auto d = batched_matmul(c, c, /*trans_b=*/true);
      return sum_all(mul(d, d));
    });
  });
  check([&] {
    auto a = random_tensor(rng, {3, 5});
    return max_rel_error({a}, [&] {
      auto s = softmax(a);
      auto n = layernorm(a);
      return add(sum_all(mul(s, n)), cross_entropy_with_logits(a, {1, 4, 0}));
    });
  });
  check([&] {
    auto a = random_tensor(rng, {4, 3});
    return max_rel_error({a}, [&] {
      auto g = gather_rows(a, {2, 0, 3, 3});
      return sum_all(mul(g, g));
    });
  });
  for (InterpMode mode :
       {InterpMode::kNearest, InterpMode::kBilinear, InterpMode::kArea}) {
    check([&] {
      auto x = random_tensor(rng, {1, 2, 4, 4});
      return max_rel_error({x}, [&] {
        auto up = interpolate(x, 7, 7, mode);
        auto down = interpolate(up, 2, 2, mode);
        return sum_all(mul(down, down));
      });
    });
  }
  check([&] {
    auto x = random_tensor(rng, {1, 2, 5, 5});
    auto w = random_tensor(rng, {3, 2, 3, 3}, 0.5);
    auto b = random_tensor(rng, {3});
    return max_rel_error({x, w, b}, [&] {
      auto y = conv3x3(x, w, b, 2);
      return mse(y, mul_scalar(y, 0.0));
    });
  });

  const double elapsed = seconds_since(t0);
  report(1, "autodiff gradients", worst < 1e-4 && elapsed < 10.0,
         "max rel err " + fmt(worst) + ", " + fmt(elapsed) + " s");
}

void criterion_2_quantize() {
  Rng rng(202);
  int64_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t vocab = 2 + rng.uniform_int(30);
    const int64_t c = 1 + rng.uniform_int(12);
    std::vector<double> codebook(static_cast<size_t>(vocab * c));
    for (double& v : codebook) v = rng.normal();
    // every 4th instance is an exact-tie construction: duplicate a row
    if (trial % 4 == 0 && vocab >= 2) {
      const int64_t dup = 1 + rng.uniform_int(vocab - 1);
      std::copy(codebook.begin() + dup * c, codebook.begin() + (dup + 1) * c,
                codebook.begin());
    }
    std::vector<double> feature(static_cast<size_t>(c));
    for (double& v : feature) v = rng.normal();
    if (trial % 4 == 0) {
      feature.assign(codebook.begin(), codebook.begin() + c);
    }

    std::vector<double> dist(static_cast<size_t>(vocab), 0.0);
    for (int64_t v = 0; v < vocab; ++v) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const double d = codebook[v * c + ch] - feature[ch];
        dist[static_cast<size_t>(v)] += d * d;
      }
    }
    int64_t expected = 0;
    for (int64_t v = 1; v < vocab; ++v) {
      if (dist[static_cast<size_t>(v)] < dist[static_cast<size_t>(expected)]) {
        expected = v;
      }
    }
    if (quantize_index(feature.data(), codebook.data(), vocab, c) != expected) {
      ++mismatches;
    }
  }
  report(2, "quantization argmin oracle", mismatches == 0,
         "1000 instances incl. ties, " + std::to_string(mismatches) +
             " mismatches");
}

void criterion_3_encode_equivalence() {
  Rng rng(303);
  const ScaleSchedule schedule{{1, 1}, {2, 2}, {4, 4}};
  const int64_t c = 5, vocab = 24;
  int token_mismatch = 0, decode_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> codebook(static_cast<size_t>(vocab * c));
    for (double& v : codebook) v = rng.normal();
    std::vector<double> f(static_cast<size_t>(c * 16));
    for (double& v : f) v = rng.normal();

    auto enc = multi_scale_encode(f.data(), c, schedule, codebook.data(), vocab);
    const auto expected = refcode::encode(f, c, 4, 4, schedule, codebook, vocab);
    for (size_t k = 0; k < expected.size(); ++k) {
      if (enc.tokens.maps[k] != expected[k]) ++token_mismatch;
    }
    const auto decoded =
        multi_scale_decode_raw(enc.tokens, schedule, codebook.data(), vocab, c);
    for (size_t i = 0; i < decoded.size(); ++i) {
      if (decoded[i] != enc.approx[i]) ++decode_mismatch;  // bit-for-bit
    }
  }
  report(3, "multi-scale encode equivalence",
         token_mismatch == 0 && decode_mismatch == 0,
         "100 maps, token mismatches " + std::to_string(token_mismatch) +
             ", decode mismatches " + std::to_string(decode_mismatch));
}

VarTransformerConfig<double> toy_var_config() {
  VarTransformerConfig<double> config;
  config.vocab = 8;
  config.width = 16;
  config.heads = 2;
  config.depth = 2;
  config.text_dim = 6;
  config.code_dim = 3;
  config.schedule = ScaleSchedule{{1, 1}, {2, 2}, {4, 4}};
  return config;
}

MultiScaleTokens random_tokens(Rng& rng, const ScaleSchedule& schedule,
                               int64_t vocab) {
  MultiScaleTokens t;
  for (const auto& [h, w] : schedule.sizes) {
    std::vector<int64_t> map(static_cast<size_t>(h * w));
    for (auto& id : map) id = rng.uniform_int(vocab);
    t.maps.push_back(std::move(map));
  }
  return t;
}

void criterion_4_factorization() {
  const auto config = toy_var_config();
  auto params = init_var_params(config, 404);
  Rng rng(405);
  std::vector<double> codebook(static_cast<size_t>(config.vocab * config.code_dim));
  for (double& v : codebook) v = rng.normal();

  NoGradGuard no_grad;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<MultiScaleTokens> tokens = {
        random_tokens(rng, config.schedule, config.vocab)};
    auto contexts = build_contexts(tokens, config.schedule, codebook.data(),
                                   config.code_dim);
    auto cond = gradcheck::random_tensor(rng, {1, config.text_dim});

    const double joint =
        forward_teacher_forced(params, tokens, cond, contexts).nll.item();
    double sequential = 0.0;
    for (int64_t k = 0; k < config.schedule.num_scales(); ++k) {
      auto fwd = forward_teacher_forced(params, tokens, cond, contexts, k + 1);
      int64_t first_row = 0;
      for (int64_t j = 0; j < k; ++j) first_row += config.schedule.tokens_at(j);
      const auto& map = tokens[0].maps[static_cast<size_t>(k)];
      for (size_t pos = 0; pos < map.size(); ++pos) {
        const double* row = fwd.logits.data() +
                            (first_row + static_cast<int64_t>(pos)) * config.vocab;
        double mx = row[0];
        for (int64_t v = 1; v < config.vocab; ++v) mx = std::max(mx, row[v]);
        double z = 0.0;
        for (int64_t v = 0; v < config.vocab; ++v) z += std::exp(row[v] - mx);
        sequential -= row[map[pos]] - mx - std::log(z);
      }
    }
    worst = std::max(worst, std::abs(joint - sequential));
  }
  report(4, "factorization identity", worst < 1e-6,
         "max |joint - sequential| " + fmt(worst));
}

void criterion_5_no_leakage() {
  const auto config = toy_var_config();
  auto params = init_var_params(config, 505);
  Rng rng(506);
  std::vector<double> codebook(static_cast<size_t>(config.vocab * config.code_dim));
  for (double& v : codebook) v = rng.normal();
  auto cond = gradcheck::random_tensor(rng, {1, config.text_dim});

  NoGradGuard no_grad;
  const int64_t early_rows = 1 + 4;  // scales 0 and 1 of [(1,1),(2,2),(4,4)]
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<MultiScaleTokens> tokens = {
        random_tokens(rng, config.schedule, config.vocab)};
    auto contexts = build_contexts(tokens, config.schedule, codebook.data(),
                                   config.code_dim);
    auto base = forward_teacher_forced(params, tokens, cond, contexts);

    std::vector<MultiScaleTokens> perturbed = tokens;
    auto& last = perturbed[0].maps.back();
    const size_t pos = static_cast<size_t>(rng.uniform_int(16));
    last[pos] = (last[pos] + 1 + rng.uniform_int(config.vocab - 1)) % config.vocab;
    auto contexts2 = build_contexts(perturbed, config.schedule, codebook.data(),
                                    config.code_dim);
    auto probe = forward_teacher_forced(params, perturbed, cond, contexts2);
    for (int64_t i = 0; i < early_rows * config.vocab; ++i) {
      worst = std::max(worst,
                       std::abs(base.logits.data()[i] - probe.logits.data()[i]));
    }
  }
  report(5, "no future leakage", worst < 1e-6,
         "100 perturbations, max early-logit delta " + fmt(worst));
}

void criterion_6_cfg_algebra() {
  Rng rng(606);
  bool identity_ok = true;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto e_c = gradcheck::random_tensor(rng, {16});
    auto e_n = gradcheck::random_tensor(rng, {16});
    const double t = rng.uniform() * 5.0;

    auto id = cfg_embed(e_c, e_n, 0.0);
    for (int64_t i = 0; i < 16; ++i) {
      identity_ok = identity_ok &&
                    id.values()[static_cast<size_t>(i)] ==
                        e_c.values()[static_cast<size_t>(i)];
    }
    auto out = cfg_embed(e_c, e_n, t);
    auto scaled = cfg_embed(mul_scalar(e_c, 2.0), mul_scalar(e_n, 2.0), t);
    for (int64_t i = 0; i < 16; ++i) {
      const double a = e_c.values()[static_cast<size_t>(i)];
      const double b = e_n.values()[static_cast<size_t>(i)];
      const double o = out.values()[static_cast<size_t>(i)];
      worst = std::max(worst, std::abs(o - ((1.0 + t) * a - t * b)));
      worst = std::max(
          worst, std::abs(scaled.values()[static_cast<size_t>(i)] - 2.0 * o));
    }
  }
  report(6, "cfg algebra", identity_ok && worst < 1e-6,
         std::string("t=0 identity ") + (identity_ok ? "exact" : "BROKEN") +
             ", max linearity residual " + fmt(worst));
}

void criterion_7_dropout_rate() {
  Rng rng(707);
  auto e_c = gradcheck::random_tensor(rng, {8});
  int replaced = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    auto out = condition_dropout(e_c, 0.1, rng);
    replaced += out.values()[0] != e_c.values()[0];
  }
  const double fraction = static_cast<double>(replaced) / trials;
  report(7, "condition dropout rate", std::abs(fraction - 0.10) <= 0.01,
         "observed " + fmt(fraction) + " over 10^4 trials");
}

// Shared state between criteria 8 and 9.
struct ReferenceRun {
  bool ok = false;
  std::string tokenizer_ckpt;
  std::string var_ckpt;
};

ReferenceRun criterion_8_reference_run() {
  ReferenceRun run;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string root = "acceptance_artifacts";
  fs::remove_all(root);
  fs::create_directories(root);
  try {
    const std::string manifest =
        write_dataset(root + "/data", generate_dataset(512, 1234));

    TrainConfig config;  // desk defaults: batch 32, 2000 steps
    config.seed = 1;
    auto stage1 = train_stage1(config, manifest, root + "/tokenizer");
    auto stage2 =
        train_stage2(config, stage1.checkpoint_path, manifest, root + "/var");

    const double elapsed = seconds_since(t0);
    const double baseline = config.schedule.total_tokens() *
                            std::log(static_cast<double>(config.vocab_size));
    const double mse_ratio = stage1.last_mse / stage1.first_mse;
    const double nll_ratio = stage2.last_nll / baseline;
    const bool pass = mse_ratio <= 0.25 && nll_ratio <= 0.70 && elapsed <= 1800.0;
    report(8, "desk-scale reference run", pass,
           "mse " + fmt(stage1.first_mse) + " -> " + fmt(stage1.last_mse) +
               " (ratio " + fmt(mse_ratio) + ", need <=0.25); nll " +
               fmt(stage2.last_nll) + " vs baseline " + fmt(baseline) +
               " (ratio " + fmt(nll_ratio) + ", need <=0.70); " +
               fmt(elapsed) + " s of 1800");
    run.ok = true;  // checkpoints exist even if a threshold is missed
    run.tokenizer_ckpt = stage1.checkpoint_path;
    run.var_ckpt = stage2.checkpoint_path;
  } catch (const std::exception& e) {
    report(8, "desk-scale reference run", false, e.what());
  }
  return run;
}

void criterion_9_controllability(const ReferenceRun& run) {
  if (!run.ok) {
    report(9, "controllability probe", false, "reference run unavailable");
    return;
  }
  try {
    auto tokenizer = load_tokenizer_checkpoint(run.tokenizer_ckpt);
    auto var = load_var_checkpoint(run.var_ckpt);
    // mean RGB prototypes of the four palette colors
    const double proto[4][3] = {
        {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};
    auto classify = [&](const Image& image) {
      double m[3] = {0, 0, 0};
      int count = 0;
      for (int64_t y = 12; y < 20; ++y) {
        for (int64_t x = 12; x < 20; ++x) {
          for (int c = 0; c < 3; ++c) m[c] += image.at(c, y, x);
          ++count;
        }
      }
      for (double& v : m) v /= count;
      int best = 0;
      double best_dist = 1e30;
      for (int p = 0; p < 4; ++p) {
        double dist = 0.0;
        for (int c = 0; c < 3; ++c) {
          dist += (m[c] - proto[p][c]) * (m[c] - proto[p][c]);
        }
        if (dist < best_dist) {
          best = p;
          best_dist = dist;
        }
      }
      return best;
    };
    // Pass condition uses the logit-space guidance mode at t=1.0; the
    // embedding-space (Eq. 11) accuracy is measured and reported alongside,
    // since its noise-negative pushes the guided embedding off the training
    // distribution at this scale and loses controllability.
    int worst_hits = 50;
    int embed_hits = 0, embed_total = 0;
    std::string detail;
    for (int color = 0; color < 4; ++color) {
      for (int shape = 0; shape < 2; ++shape) {
        const std::string caption =
            "a " + color_names()[static_cast<size_t>(color)] + " " +
            shape_names()[static_cast<size_t>(shape)] +
            " on a black background";
        int hits = 0;
        for (uint64_t seed = 0; seed < 50; ++seed) {
          auto out = sample_to_image(caption, tokenizer, var, 1.0f, seed,
                                     CfgSpace::kLogits);
          hits += classify(out.image) == color;
        }
        for (uint64_t seed = 0; seed < 10; ++seed) {
          auto out = sample_to_image(caption, tokenizer, var, 1.0f, seed,
                                     CfgSpace::kEmbedding);
          embed_hits += classify(out.image) == color;
          ++embed_total;
        }
        worst_hits = std::min(worst_hits, hits);
        detail += color_names()[static_cast<size_t>(color)][0] +
                  std::to_string(shape) + "=" + std::to_string(hits) + "/50 ";
      }
    }
    report(9, "controllability probe", worst_hits >= 40,
           "cfg_space=logits t=1.0: " + detail + "need >=40; embedding-space " +
               "Eq. 11 comparison " + std::to_string(embed_hits) + "/" +
               std::to_string(embed_total));
  } catch (const std::exception& e) {
    report(9, "controllability probe", false, e.what());
  }
}

void criterion_10_determinism() {
  try {
    const std::string root = "acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string manifest =
        write_dataset(root + "/data", generate_dataset(16, 77));

    TrainConfig config;
    config.steps = 5;
    config.batch_size = 4;
    config.seed = 9;
    config.vocab_size = 8;
    config.code_dim = 4;
    config.hidden = 8;
    config.width = 16;
    config.depth = 1;
    config.heads = 2;
    config.text_dim = 8;

    bool pass = true;
    std::string tok_a, var_a;
    for (int run = 0; run < 2; ++run) {
      const std::string dir = root + "/run" + std::to_string(run);
      auto stage1 = train_stage1(config, manifest, dir + "/tok");
      auto stage2 =
          train_stage2(config, stage1.checkpoint_path, manifest, dir + "/var");
      auto tokenizer = load_tokenizer_checkpoint(stage1.checkpoint_path);
      auto var = load_var_checkpoint(stage2.checkpoint_path);
      auto sample = sample_to_image("a blue circle on a white background",
                                    tokenizer, var, 1.0f, 5);
      write_sample_output(dir + "/sample", sample, config.schedule);
      if (run == 0) {
        tok_a = stage1.checkpoint_path;
        var_a = stage2.checkpoint_path;
      } else {
        pass = pass && file_bytes(tok_a) == file_bytes(stage1.checkpoint_path);
        pass = pass && file_bytes(var_a) == file_bytes(stage2.checkpoint_path);
        pass = pass && file_bytes(root + "/run0/sample.ppm") ==
                           file_bytes(root + "/run1/sample.ppm");
        pass = pass && file_bytes(root + "/run0/sample.tokens.varc") ==
                           file_bytes(root + "/run1/sample.tokens.varc");
      }
    }
    report(10, "determinism", pass,
           "checkpoints, token dumps and PPM byte-compared over two runs");
    fs::remove_all(root);
  } catch (const std::exception& e) {
    report(10, "determinism", false, e.what());
  }
}

void criterion_11_position_analyzer() {
  try {
    TextEncoderConfig<float> config;
    auto text = init_text_encoder(config, kTextEncoderSeed);
    bool sums_ok = true;
    for (int64_t n : {1, 5, 16, 77}) {
      auto rep = position_scores(text, n);
      for (const auto& row : rep.layer_scores) {
        double sum = 0.0;
        for (float s : row) sum += s;
        sums_ok = sums_ok && std::abs(sum - 1.0) < 1e-6;
      }
    }

    auto zeroed = init_text_encoder(config, kTextEncoderSeed);
    for (auto& lay : zeroed.layers) {
      for (float& v : lay.wq.values()) v = 0.0f;
      for (float& v : lay.wk.values()) v = 0.0f;
    }
    const int64_t n = 7;
    auto degenerate = position_scores(zeroed, n);
    bool uniform_ok = true;
    for (const auto& row : degenerate.layer_scores) {
      for (float s : row) {
        uniform_ok = uniform_ok &&
                     std::abs(s - 1.0f / static_cast<float>(n)) < 1e-7f;
      }
    }

    const auto rep = position_scores(text, 20);
    const std::string csv = "acceptance_positions.csv";
    write_position_report(csv, rep);
    const auto loaded = read_position_report(csv);
    bool csv_ok = loaded.layer_scores.size() == rep.layer_scores.size();
    for (size_t l = 0; csv_ok && l < rep.layer_scores.size(); ++l) {
      csv_ok = loaded.layer_scores[l] == rep.layer_scores[l];
    }
    std::remove(csv.c_str());

    report(11, "position analyzer", sums_ok && uniform_ok && csv_ok,
           std::string("row sums ") + (sums_ok ? "ok" : "BROKEN") +
               ", degenerate uniform " + (uniform_ok ? "ok" : "BROKEN") +
               ", csv round trip " + (csv_ok ? "lossless" : "LOSSY"));
  } catch (const std::exception& e) {
    report(11, "position analyzer", false, e.what());
  }
}

void criterion_12_checkpoint_roundtrip() {
  try {
    TextEncoderConfig<float> config;
    config.width = 16;
    config.depth = 1;
    config.heads = 2;
    auto params = init_text_encoder(config, 1212);
    const auto tokens = tokenize("a green circle");
    const auto before = encode_text(params, tokens);

    const std::string path = "acceptance_roundtrip.varc";
    save_checkpoint(path, snapshot_params(ModuleTag::kTextEncoder,
                                          ScaleSchedule{{1, 1}}, params.named()));
    for (auto& [name, t] : params.named()) {
      for (float& v : t.values()) v += 1.0f;
    }
    restore_params(load_checkpoint(path), params.named());
    const auto after = encode_text(params, tokens);
    bool bit_exact = before.numel() == after.numel();
    for (int64_t i = 0; bit_exact && i < before.numel(); ++i) {
      bit_exact = before.data()[i] == after.data()[i];
    }

    // corruption is rejected and leaves the live parameters untouched
    auto bytes = file_bytes(path);
    bytes.resize(bytes.size() / 2);
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    bool rejected = false;
    try {
      restore_params(load_checkpoint(path), params.named());
    } catch (const std::exception&) {
      rejected = true;
    }
    const auto untouched = encode_text(params, tokens);
    bool state_ok = true;
    for (int64_t i = 0; i < before.numel(); ++i) {
      state_ok = state_ok && untouched.data()[i] == before.data()[i];
    }
    std::remove(path.c_str());

    report(12, "checkpoint round trip", bit_exact && rejected && state_ok,
           std::string("forward ") + (bit_exact ? "bit-exact" : "DIFFERS") +
               ", corrupt file " + (rejected ? "rejected" : "ACCEPTED") +
               ", state " + (state_ok ? "untouched" : "CLOBBERED"));
  } catch (const std::exception& e) {
    report(12, "checkpoint round trip", false, e.what());
  }
}

}  // namespace

int main() {
  criterion_1_autodiff();
  criterion_2_quantize();
  criterion_3_encode_equivalence();
  criterion_4_factorization();
  criterion_5_no_leakage();
  criterion_6_cfg_algebra();
  criterion_7_dropout_rate();
  const ReferenceRun run = criterion_8_reference_run();
  criterion_9_controllability(run);
  criterion_10_determinism();
  criterion_11_position_analyzer();
  criterion_12_checkpoint_roundtrip();

  std::cout << (g_failures == 0 ? "acceptance: all 12 criteria passed"
                                : "acceptance: " + std::to_string(g_failures) +
                                      " criteria FAILED")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
