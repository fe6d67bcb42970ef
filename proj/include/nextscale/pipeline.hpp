#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nextscale/checkpoint.hpp"
#include "nextscale/dataset.hpp"
#include "nextscale/text_encoder.hpp"
#include "nextscale/tokenizer.hpp"
#include "nextscale/var_transformer.hpp"

namespace nextscale {

// The text encoder is deterministic and untrained; every stage has to
// build the identical one, so its seed is fixed.
inline constexpr uint64_t kTextEncoderSeed = 0x7e57c0deULL;

struct TrainConfig {
  int64_t steps = 2000;
  int64_t batch_size = 32;
  float lr = 1e-4f;
  float beta1 = 0.95f;
  float beta2 = 0.95f;
  float weight_decay = 0.05f;
  float cond_dropout = 0.10f;
  uint64_t seed = 0;

  // model shape
  int64_t vocab_size = 32;
  int64_t code_dim = 16;
  int64_t hidden = 32;
  int64_t width = 128;
  int64_t depth = 4;
  int64_t heads = 4;
  int64_t text_dim = 64;
  float lambda_p = 0.0f;
  float beta_commit = 0.25f;
  bool phi_conv = false;
  bool pin_zero_code = true;
  ScaleSchedule schedule = default_schedule();

  void validate() const;
};

// Flat key=value file; '#' starts a comment. Unknown keys are an error.
TrainConfig load_train_config(const std::string& path);
void apply_config_entry(TrainConfig& config, const std::string& key,
                        const std::string& value);
// NEXTSCALE_SEED, when set, provides the default seed.
uint64_t default_seed_from_env();

TokenizerConfig<float> tokenizer_config_from(const TrainConfig& config);
VarTransformerConfig<float> var_config_from(const TrainConfig& config);

// ---------------------------------------------------------------------------
// training stages

struct StageResult {
  std::string checkpoint_path;
  std::string metrics_path;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double first_mse = 0.0;   // stage 1 only
  double last_mse = 0.0;    // stage 1 only
  double first_nll = 0.0;   // stage 2 only, per image
  double last_nll = 0.0;    // stage 2 only, per image
};

StageResult train_stage1(const TrainConfig& config,
                         const std::string& manifest_path,
                         const std::string& out_dir);
StageResult train_stage2(const TrainConfig& config,
                         const std::string& tokenizer_ckpt_path,
                         const std::string& manifest_path,
                         const std::string& out_dir);

// ---------------------------------------------------------------------------
// checkpoint bridges

struct LoadedTokenizer {
  TokenizerParams<float> params;
};
struct LoadedVar {
  VarParams<float> params;
  TextEncoderParams<float> text;
};

LoadedTokenizer load_tokenizer_checkpoint(const std::string& path);
LoadedVar load_var_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// sampling and evaluation

struct SampleOutput {
  Image image;
  MultiScaleTokens tokens;
};

SampleOutput sample_to_image(const std::string& caption,
                             LoadedTokenizer& tokenizer, LoadedVar& var,
                             float guidance_weight, uint64_t seed,
                             CfgSpace cfg_space = CfgSpace::kEmbedding);

// Writes <base>.ppm and <base>.tokens.varc (token maps as i32 records).
void write_sample_output(const std::string& base_path,
                         const SampleOutput& output,
                         const ScaleSchedule& schedule);
MultiScaleTokens read_token_dump(const std::string& path);

struct EvalSummary {
  double mean_reconstruction_mse = 0.0;
  double mean_nll = 0.0;          // per image, teacher forced
  double uniform_baseline = 0.0;  // total_tokens * ln V
  int64_t num_samples = 0;
};

EvalSummary evaluate(LoadedTokenizer& tokenizer, LoadedVar& var,
                     const std::string& manifest_path,
                     const std::string& out_csv);

// ---------------------------------------------------------------------------
// analysis

// CSV: layer,position,score (one row per layer x position).
void write_position_report(const std::string& path,
                           const PositionScoreReport<float>& report);
PositionScoreReport<float> read_position_report(const std::string& path);

}  // namespace nextscale
