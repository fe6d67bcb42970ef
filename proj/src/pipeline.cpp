#include "nextscale/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nextscale/optimizer.hpp"

namespace nextscale {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "': " + value);
}

ScaleSchedule parse_schedule(const std::string& value) {
  ScaleSchedule schedule;
  std::istringstream is(value);
  std::string part;
  while (std::getline(is, part, ',')) {
    part = trim(part);
    const size_t x = part.find('x');
    if (x == std::string::npos) {
      throw std::invalid_argument("config: bad schedule entry '" + part + "'");
    }
    schedule.sizes.emplace_back(std::stoll(part.substr(0, x)),
                                std::stoll(part.substr(x + 1)));
  }
  schedule.validate();
  return schedule;
}

std::string format_schedule(const ScaleSchedule& schedule) {
  std::string out;
  for (const auto& [h, w] : schedule.sizes) {
    if (!out.empty()) out.push_back(',');
    out += std::to_string(h) + "x" + std::to_string(w);
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << std::setprecision(9);
  return out;
}

Tensor<float> batch_images(const std::vector<ShapeSample>& samples,
                           const std::vector<int64_t>& indices) {
  const Image& first = samples[static_cast<size_t>(indices[0])].image;
  const int64_t s = first.height;
  const int64_t batch = static_cast<int64_t>(indices.size());
  std::vector<float> data;
  data.reserve(static_cast<size_t>(batch * 3 * s * s));
  for (int64_t i : indices) {
    const auto& px = samples[static_cast<size_t>(i)].image.pixels;
    data.insert(data.end(), px.begin(), px.end());
  }
  return Tensor<float>::from_values({batch, 3, s, s}, std::move(data));
}

double plain_mse(const Tensor<float>& a, const Tensor<float>& b) {
  double total = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) -
                     static_cast<double>(b.data()[i]);
    total += d * d;
  }
  return total / static_cast<double>(a.numel());
}

TextEncoderConfig<float> text_config_for(const TrainConfig& config) {
  TextEncoderConfig<float> tc;
  tc.width = config.text_dim;
  return tc;
}

constexpr const char* kTokenizerMetaKey = "meta.tokenizer";
constexpr const char* kVarMetaKey = "meta.var";

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (batch_size < 1) {
    throw std::invalid_argument("config: batch_size must be >= 1");
  }
  if (lr < 0) throw std::invalid_argument("config: lr must be >= 0");
  if (cond_dropout < 0.0f || cond_dropout > 1.0f) {
    throw std::invalid_argument("config: cond_dropout out of [0,1]");
  }
  if (vocab_size < 1 || code_dim < 1 || hidden < 1 || width < 1 || depth < 1 ||
      heads < 1 || text_dim < 1) {
    throw std::invalid_argument("config: model dimensions must be positive");
  }
  if (width % heads != 0) {
    throw std::invalid_argument("config: heads must divide width");
  }
  if (text_dim % 4 != 0) {
    throw std::invalid_argument("config: text_dim must be divisible by 4");
  }
  schedule.validate();
}

void apply_config_entry(TrainConfig& config, const std::string& key,
                        const std::string& value) {
  if (key == "steps") config.steps = std::stoll(value);
  else if (key == "batch_size") config.batch_size = std::stoll(value);
  else if (key == "lr") config.lr = std::stof(value);
  else if (key == "beta1") config.beta1 = std::stof(value);
  else if (key == "beta2") config.beta2 = std::stof(value);
  else if (key == "weight_decay") config.weight_decay = std::stof(value);
  else if (key == "cond_dropout") config.cond_dropout = std::stof(value);
  else if (key == "seed") config.seed = std::stoull(value);
  else if (key == "vocab_size") config.vocab_size = std::stoll(value);
  else if (key == "code_dim") config.code_dim = std::stoll(value);
  else if (key == "hidden") config.hidden = std::stoll(value);
  else if (key == "width") config.width = std::stoll(value);
  else if (key == "depth") config.depth = std::stoll(value);
  else if (key == "heads") config.heads = std::stoll(value);
  else if (key == "text_dim") config.text_dim = std::stoll(value);
  else if (key == "lambda_p") config.lambda_p = std::stof(value);
  else if (key == "beta_commit") config.beta_commit = std::stof(value);
  else if (key == "phi_conv") config.phi_conv = parse_bool(value, key);
  else if (key == "pin_zero_code") config.pin_zero_code = parse_bool(value, key);
  else if (key == "schedule") config.schedule = parse_schedule(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  TrainConfig config;
  config.seed = default_seed_from_env();
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config '" + path + "' line " +
                                  std::to_string(line_no) + ": expected key=value");
    }
    apply_config_entry(config, trim(line.substr(0, eq)),
                       trim(line.substr(eq + 1)));
  }
  return config;
}

uint64_t default_seed_from_env() {
  const char* env = std::getenv("NEXTSCALE_SEED");
  if (env == nullptr || *env == '\0') return 0;
  return std::stoull(env);
}

TokenizerConfig<float> tokenizer_config_from(const TrainConfig& config) {
  TokenizerConfig<float> tc;
  tc.vocab_size = config.vocab_size;
  tc.code_dim = config.code_dim;
  tc.hidden = config.hidden;
  tc.schedule = config.schedule;
  tc.image_size = config.schedule.final_h() * 4;
  tc.pin_zero_code = config.pin_zero_code;
  tc.phi_conv = config.phi_conv;
  tc.lambda_p = config.lambda_p;
  tc.beta_commit = config.beta_commit;
  return tc;
}

VarTransformerConfig<float> var_config_from(const TrainConfig& config) {
  VarTransformerConfig<float> vc;
  vc.vocab = config.vocab_size;
  vc.width = config.width;
  vc.heads = config.heads;
  vc.depth = config.depth;
  vc.text_dim = config.text_dim;
  vc.code_dim = config.code_dim;
  vc.schedule = config.schedule;
  return vc;
}

// ---------------------------------------------------------------------------
// stage 1: tokenizer

StageResult train_stage1(const TrainConfig& config,
                         const std::string& manifest_path,
                         const std::string& out_dir) {
  config.validate();
  const std::vector<ShapeSample> samples = load_dataset(manifest_path);
  if (samples.empty()) {
    throw std::runtime_error("train_stage1: dataset '" + manifest_path +
                             "' is empty");
  }
  const TokenizerConfig<float> tok_config = tokenizer_config_from(config);
  if (samples.front().image.height != tok_config.image_size) {
    throw std::runtime_error("train_stage1: dataset image size " +
                             std::to_string(samples.front().image.height) +
                             " does not match schedule (expects " +
                             std::to_string(tok_config.image_size) + ")");
  }
  TokenizerParams<float> params = init_tokenizer_params(tok_config, config.seed);

  AdamWConfig<float> opt_config;
  opt_config.lr = config.lr;
  opt_config.beta1 = config.beta1;
  opt_config.beta2 = config.beta2;
  opt_config.weight_decay = config.weight_decay;
  AdamW<float> optimizer(opt_config);
  for (auto& [name, t] : params.named()) optimizer.register_param(name, t);

  Rng batch_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<int64_t> last_used(static_cast<size_t>(config.vocab_size), 0);

  fs::create_directories(out_dir);
  StageResult result;
  result.metrics_path = (fs::path(out_dir) / "tokenizer_metrics.csv").string();
  std::ofstream metrics = open_out(result.metrics_path);
  metrics << "step,loss,mse,perplexity\n";

  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t hw = tok_config.schedule.final_h() * tok_config.schedule.final_w();
  for (int64_t step = 1; step <= config.steps; ++step) {
    std::vector<int64_t> indices(static_cast<size_t>(config.batch_size));
    for (int64_t& i : indices) i = batch_rng.uniform_int(n);
    Tensor<float> images = batch_images(samples, indices);

    Tensor<float> feature = encoder_forward(params, images);
    const PhiRaw<float> phi = params.phi_raw();
    std::vector<MultiScaleTokens> tokens(indices.size());
    for (size_t b = 0; b < indices.size(); ++b) {
      EncodeResult<float> enc = multi_scale_encode(
          feature.data() + static_cast<int64_t>(b) * tok_config.code_dim * hw,
          tok_config.code_dim, tok_config.schedule, params.codebook.data(),
          tok_config.vocab_size, phi.enabled() ? &phi : nullptr);
      tokens[b] = std::move(enc.tokens);
    }
    Tensor<float> z_q = multi_scale_decode_batch(
        tokens, tok_config.schedule, params.codebook,
        tok_config.phi_conv ? &params.phi_w : nullptr,
        tok_config.phi_conv ? &params.phi_b : nullptr);
    Tensor<float> fhat = straight_through(feature, z_q);
    Tensor<float> recon = decoder_forward(params, fhat);
    Tensor<float> loss = tokenizer_loss(images, recon, feature, z_q,
                                        tok_config.lambda_p,
                                        tok_config.beta_commit);
    const double loss_val = static_cast<double>(loss.item());
    if (!std::isfinite(loss_val)) {
      throw std::runtime_error("train_stage1: non-finite loss at step " +
                               std::to_string(step));
    }
    const double mse_val = plain_mse(images, recon);
    const CodebookHealth health = codebook_health(tokens, config.vocab_size);

    backward(loss);
    optimizer.step();
    optimizer.zero_grads();

    if (tok_config.pin_zero_code) {
      std::fill(params.codebook.values().begin(),
                params.codebook.values().begin() + tok_config.code_dim, 0.0f);
    }
    // codes unused for 500 consecutive steps restart from a live encoder
    // feature vector
    for (int64_t v = 0; v < config.vocab_size; ++v) {
      if (health.counts[static_cast<size_t>(v)] > 0) last_used[static_cast<size_t>(v)] = step;
    }
    for (int64_t v = tok_config.pin_zero_code ? 1 : 0; v < config.vocab_size;
         ++v) {
      if (step - last_used[static_cast<size_t>(v)] <= 500) continue;
      const int64_t b = batch_rng.uniform_int(static_cast<int64_t>(indices.size()));
      const int64_t p = batch_rng.uniform_int(hw);
      for (int64_t c = 0; c < tok_config.code_dim; ++c) {
        params.codebook.values()[static_cast<size_t>(v * tok_config.code_dim + c)] =
            feature.data()[(b * tok_config.code_dim + c) * hw + p];
      }
      last_used[static_cast<size_t>(v)] = step;
    }

    metrics << step << "," << loss_val << "," << mse_val << ","
            << health.perplexity << "\n";
    if (step == 1) {
      result.first_loss = loss_val;
      result.first_mse = mse_val;
    }
    result.last_loss = loss_val;
    result.last_mse = mse_val;
  }
  metrics.close();

  Checkpoint checkpoint = snapshot_params(ModuleTag::kTokenizer,
                                          tok_config.schedule, params.named());
  CheckpointRecord meta;
  meta.shape = {3};
  meta.f32 = {tok_config.pin_zero_code ? 1.0f : 0.0f, tok_config.lambda_p,
              tok_config.beta_commit};
  checkpoint.records.emplace_back(kTokenizerMetaKey, std::move(meta));
  result.checkpoint_path = (fs::path(out_dir) / "tokenizer.varc").string();
  save_checkpoint(result.checkpoint_path, checkpoint);
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint bridges

LoadedTokenizer load_tokenizer_checkpoint(const std::string& path) {
  const Checkpoint checkpoint = load_checkpoint(path);
  if (checkpoint.tag != ModuleTag::kTokenizer) {
    throw std::runtime_error("'" + path + "' is not a tokenizer checkpoint");
  }
  const CheckpointRecord* codebook = checkpoint.find("codebook");
  const CheckpointRecord* enc_w1 = checkpoint.find("enc.w1");
  if (codebook == nullptr || codebook->shape.size() != 2 ||
      enc_w1 == nullptr || enc_w1->shape.size() != 4) {
    throw std::runtime_error("'" + path + "': malformed tokenizer checkpoint");
  }
  TokenizerConfig<float> config;
  config.vocab_size = codebook->shape[0];
  config.code_dim = codebook->shape[1];
  config.hidden = enc_w1->shape[0];
  config.schedule = checkpoint.schedule;
  config.image_size = checkpoint.schedule.final_h() * 4;
  config.phi_conv = checkpoint.find("phi.w") != nullptr;
  if (const CheckpointRecord* meta = checkpoint.find(kTokenizerMetaKey)) {
    config.pin_zero_code = meta->f32.at(0) != 0.0f;
    config.lambda_p = meta->f32.at(1);
    config.beta_commit = meta->f32.at(2);
  }
  LoadedTokenizer loaded{init_tokenizer_params(config, 0)};
  restore_params(checkpoint, loaded.params.named());
  return loaded;
}

LoadedVar load_var_checkpoint(const std::string& path) {
  const Checkpoint checkpoint = load_checkpoint(path);
  if (checkpoint.tag != ModuleTag::kVarTransformer) {
    throw std::runtime_error("'" + path + "' is not a var checkpoint");
  }
  const CheckpointRecord* head_w = checkpoint.find("var.head_w");
  const CheckpointRecord* start_w = checkpoint.find("var.start_w");
  const CheckpointRecord* input_w = checkpoint.find("var.input_w");
  const CheckpointRecord* meta = checkpoint.find(kVarMetaKey);
  const CheckpointRecord* text_emb = checkpoint.find("text.tok_emb");
  const CheckpointRecord* text_pos = checkpoint.find("text.pos_emb");
  if (head_w == nullptr || start_w == nullptr || input_w == nullptr ||
      meta == nullptr || text_emb == nullptr || text_pos == nullptr) {
    throw std::runtime_error("'" + path + "': malformed var checkpoint");
  }
  VarTransformerConfig<float> config;
  config.width = head_w->shape.at(0);
  config.vocab = head_w->shape.at(1);
  config.text_dim = start_w->shape.at(0);
  config.code_dim = input_w->shape.at(0);
  config.schedule = checkpoint.schedule;
  config.heads = static_cast<int64_t>(meta->f32.at(0));
  int64_t depth = 0;
  while (checkpoint.find("var.block" + std::to_string(depth) + ".wq")) ++depth;
  config.depth = depth;

  TextEncoderConfig<float> text_config;
  text_config.width = text_emb->shape.at(1);
  text_config.max_len = text_pos->shape.at(0);
  text_config.heads = static_cast<int64_t>(meta->f32.at(1));
  int64_t text_depth = 0;
  while (checkpoint.find("text.layer" + std::to_string(text_depth) + ".wq")) {
    ++text_depth;
  }
  text_config.depth = text_depth;

  LoadedVar loaded{init_var_params(config, 0),
                   init_text_encoder(text_config, 0)};
  restore_params(checkpoint, loaded.params.named());
  restore_params(checkpoint, loaded.text.named());
  return loaded;
}

// ---------------------------------------------------------------------------
// stage 2: text-conditioned transformer

StageResult train_stage2(const TrainConfig& config,
                         const std::string& tokenizer_ckpt_path,
                         const std::string& manifest_path,
                         const std::string& out_dir) {
  config.validate();
  LoadedTokenizer tokenizer = load_tokenizer_checkpoint(tokenizer_ckpt_path);
  const TokenizerConfig<float>& tok_config = tokenizer.params.config;
  if (tok_config.schedule != config.schedule) {
    throw std::runtime_error(
        "train_stage2: tokenizer schedule " +
        format_schedule(tok_config.schedule) + " does not match config " +
        format_schedule(config.schedule));
  }
  if (tok_config.vocab_size != config.vocab_size ||
      tok_config.code_dim != config.code_dim) {
    throw std::runtime_error("train_stage2: tokenizer vocab/code_dim does not "
                             "match config");
  }
  tokenizer.params.set_requires_grad(false);

  const std::vector<ShapeSample> samples = load_dataset(manifest_path);
  if (samples.empty()) {
    throw std::runtime_error("train_stage2: dataset '" + manifest_path +
                             "' is empty");
  }

  TextEncoderParams<float> text =
      init_text_encoder(text_config_for(config), kTextEncoderSeed);

  // the tokenizer and text encoder are frozen, so tokens, contexts and
  // caption embeddings can all be computed once up front
  const PhiRaw<float> phi = tokenizer.params.phi_raw();
  const PhiRaw<float>* phi_ptr = phi.enabled() ? &phi : nullptr;
  std::vector<MultiScaleTokens> all_tokens(samples.size());
  std::vector<std::vector<std::vector<float>>> all_contexts(samples.size());
  std::map<std::string, std::vector<float>> caption_embeddings;
  {
    NoGradGuard no_grad;
    const int64_t hw = config.schedule.final_h() * config.schedule.final_w();
    for (size_t i = 0; i < samples.size(); ++i) {
      std::vector<int64_t> index = {static_cast<int64_t>(i)};
      Tensor<float> image = batch_images(samples, index);
      Tensor<float> feature = encoder_forward(tokenizer.params, image);
      (void)hw;
      EncodeResult<float> enc = multi_scale_encode(
          feature.data(), config.code_dim, config.schedule,
          tokenizer.params.codebook.data(), config.vocab_size, phi_ptr);
      all_contexts[i] = scale_context_features(
          enc.tokens, config.schedule, tokenizer.params.codebook.data(),
          config.code_dim, phi_ptr);
      all_tokens[i] = std::move(enc.tokens);
      const std::string& caption = samples[i].caption;
      if (!caption_embeddings.count(caption)) {
        Tensor<float> e_c = encode_text(text, tokenize(caption));
        caption_embeddings.emplace(caption, e_c.values());
      }
    }
  }

  const VarTransformerConfig<float> var_config = var_config_from(config);
  VarParams<float> params = init_var_params(var_config, config.seed);

  AdamWConfig<float> opt_config;
  opt_config.lr = config.lr;
  opt_config.beta1 = config.beta1;
  opt_config.beta2 = config.beta2;
  opt_config.weight_decay = config.weight_decay;
  AdamW<float> optimizer(opt_config);
  for (auto& [name, t] : params.named()) optimizer.register_param(name, t);

  Rng rng(config.seed ^ 0xA24BAED4963EE407ULL);

  fs::create_directories(out_dir);
  StageResult result;
  result.metrics_path = (fs::path(out_dir) / "var_metrics.csv").string();
  std::ofstream metrics = open_out(result.metrics_path);
  metrics << "step,loss,nll\n";

  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t num_pos = config.schedule.total_tokens();
  for (int64_t step = 1; step <= config.steps; ++step) {
    std::vector<int64_t> indices(static_cast<size_t>(config.batch_size));
    for (int64_t& i : indices) i = rng.uniform_int(n);

    std::vector<MultiScaleTokens> tokens;
    std::vector<std::vector<std::vector<float>>> contexts;
    std::vector<float> cond_data;
    tokens.reserve(indices.size());
    contexts.reserve(indices.size());
    cond_data.reserve(indices.size() * static_cast<size_t>(config.text_dim));
    for (int64_t i : indices) {
      tokens.push_back(all_tokens[static_cast<size_t>(i)]);
      contexts.push_back(all_contexts[static_cast<size_t>(i)]);
      Tensor<float> e_c = Tensor<float>::from_values(
          {config.text_dim},
          caption_embeddings.at(samples[static_cast<size_t>(i)].caption));
      Tensor<float> dropped = condition_dropout(e_c, config.cond_dropout, rng);
      cond_data.insert(cond_data.end(), dropped.values().begin(),
                       dropped.values().end());
    }
    Tensor<float> cond = Tensor<float>::from_values(
        {config.batch_size, config.text_dim}, std::move(cond_data));

    VarForwardResult<float> fwd =
        forward_teacher_forced(params, tokens, cond, contexts);
    Tensor<float> loss = mul_scalar(
        fwd.nll, 1.0f / static_cast<float>(config.batch_size * num_pos));
    const double loss_val = static_cast<double>(loss.item());
    if (!std::isfinite(loss_val)) {
      throw std::runtime_error("train_stage2: non-finite loss at step " +
                               std::to_string(step));
    }
    const double nll_val = static_cast<double>(fwd.nll.item()) /
                           static_cast<double>(config.batch_size);

    backward(loss);
    optimizer.step();
    optimizer.zero_grads();

    metrics << step << "," << loss_val << "," << nll_val << "\n";
    if (step == 1) {
      result.first_loss = loss_val;
      result.first_nll = nll_val;
    }
    result.last_loss = loss_val;
    result.last_nll = nll_val;
  }
  metrics.close();

  Checkpoint checkpoint = snapshot_params(ModuleTag::kVarTransformer,
                                          config.schedule, params.named());
  for (auto& [name, t] : text.named()) {
    CheckpointRecord record;
    record.shape = t.shape();
    record.f32 = t.values();
    checkpoint.records.emplace_back(name, std::move(record));
  }
  CheckpointRecord meta;
  meta.shape = {2};
  meta.f32 = {static_cast<float>(config.heads),
              static_cast<float>(text.config.heads)};
  checkpoint.records.emplace_back(kVarMetaKey, std::move(meta));
  result.checkpoint_path = (fs::path(out_dir) / "var.varc").string();
  save_checkpoint(result.checkpoint_path, checkpoint);
  return result;
}

// ---------------------------------------------------------------------------
// sampling

SampleOutput sample_to_image(const std::string& caption,
                             LoadedTokenizer& tokenizer, LoadedVar& var,
                             float guidance_weight, uint64_t seed,
                             CfgSpace cfg_space) {
  NoGradGuard no_grad;
  const TokenizerConfig<float>& tok_config = tokenizer.params.config;
  const VarTransformerConfig<float>& var_config = var.params.config;
  if (tok_config.schedule != var_config.schedule) {
    throw std::runtime_error("sample: tokenizer and var schedules differ");
  }

  Tensor<float> e_c = encode_text(var.text, tokenize(caption));
  Rng master(seed);
  GuidanceConfig<float> guidance;
  guidance.weight = guidance_weight;
  guidance.noise_seed = master.next_u64();
  const uint64_t draw_seed = master.next_u64();

  const PhiRaw<float> phi = tokenizer.params.phi_raw();
  const PhiRaw<float>* phi_ptr = phi.enabled() ? &phi : nullptr;
  SamplerConfig<float> sampler;
  SampleOutput output;
  if (cfg_space == CfgSpace::kLogits && guidance.weight != 0.0f) {
    Tensor<float> e_n = reshape(
        guidance_noise<float>(e_c.numel(), guidance.noise_seed), e_c.shape());
    output.tokens =
        sample(var.params, e_c, tokenizer.params.codebook.data(), phi_ptr,
               sampler, draw_seed, &e_n, guidance.weight);
  } else {
    Tensor<float> e_g = cfg_embed(e_c, guidance);
    output.tokens = sample(var.params, e_g, tokenizer.params.codebook.data(),
                           phi_ptr, sampler, draw_seed);
  }

  std::vector<float> fhat = multi_scale_decode_raw(
      output.tokens, tok_config.schedule, tokenizer.params.codebook.data(),
      tok_config.vocab_size, tok_config.code_dim, phi_ptr);
  Tensor<float> fhat_t = Tensor<float>::from_values(
      {1, tok_config.code_dim, tok_config.schedule.final_h(),
       tok_config.schedule.final_w()},
      std::move(fhat));
  Tensor<float> recon = decoder_forward(tokenizer.params, fhat_t);

  output.image.height = recon.shape()[2];
  output.image.width = recon.shape()[3];
  output.image.pixels.resize(static_cast<size_t>(recon.numel()));
  for (int64_t i = 0; i < recon.numel(); ++i) {
    output.image.pixels[static_cast<size_t>(i)] =
        std::clamp(recon.data()[i], 0.0f, 1.0f);
  }
  return output;
}

void write_sample_output(const std::string& base_path,
                         const SampleOutput& output,
                         const ScaleSchedule& schedule) {
  write_ppm(base_path + ".ppm", output.image);
  Checkpoint dump;
  dump.tag = ModuleTag::kTokenDump;
  dump.schedule = schedule;
  for (int64_t k = 0; k < output.tokens.num_scales(); ++k) {
    CheckpointRecord record;
    record.int_dtype = true;
    record.shape = {schedule.sizes[static_cast<size_t>(k)].first,
                    schedule.sizes[static_cast<size_t>(k)].second};
    for (int64_t id : output.tokens.maps[static_cast<size_t>(k)]) {
      record.i32.push_back(static_cast<int32_t>(id));
    }
    dump.records.emplace_back("scale_" + std::to_string(k), std::move(record));
  }
  save_checkpoint(base_path + ".tokens.varc", dump);
}

MultiScaleTokens read_token_dump(const std::string& path) {
  const Checkpoint dump = load_checkpoint(path);
  if (dump.tag != ModuleTag::kTokenDump) {
    throw std::runtime_error("'" + path + "' is not a token dump");
  }
  MultiScaleTokens tokens;
  for (int64_t k = 0; k < dump.schedule.num_scales(); ++k) {
    const CheckpointRecord* record =
        dump.find("scale_" + std::to_string(k));
    if (record == nullptr || !record->is_int()) {
      throw std::runtime_error("'" + path + "': missing token map " +
                               std::to_string(k));
    }
    std::vector<int64_t> map(record->i32.begin(), record->i32.end());
    tokens.maps.push_back(std::move(map));
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// eval

EvalSummary evaluate(LoadedTokenizer& tokenizer, LoadedVar& var,
                     const std::string& manifest_path,
                     const std::string& out_csv) {
  NoGradGuard no_grad;
  const TokenizerConfig<float>& tok_config = tokenizer.params.config;
  const std::vector<ShapeSample> samples = load_dataset(manifest_path);
  if (samples.empty()) {
    throw std::runtime_error("evaluate: dataset '" + manifest_path +
                             "' is empty");
  }
  const PhiRaw<float> phi = tokenizer.params.phi_raw();
  const PhiRaw<float>* phi_ptr = phi.enabled() ? &phi : nullptr;

  std::ofstream csv = open_out(out_csv);
  csv << "id,caption,mse,nll\n";

  std::map<std::string, std::vector<float>> caption_embeddings;
  EvalSummary summary;
  for (size_t i = 0; i < samples.size(); ++i) {
    std::vector<int64_t> index = {static_cast<int64_t>(i)};
    Tensor<float> image = batch_images(samples, index);
    Tensor<float> feature = encoder_forward(tokenizer.params, image);
    EncodeResult<float> enc = multi_scale_encode(
        feature.data(), tok_config.code_dim, tok_config.schedule,
        tokenizer.params.codebook.data(), tok_config.vocab_size, phi_ptr);
    Tensor<float> fhat_t = Tensor<float>::from_values(
        {1, tok_config.code_dim, tok_config.schedule.final_h(),
         tok_config.schedule.final_w()},
        multi_scale_decode_raw(enc.tokens, tok_config.schedule,
                               tokenizer.params.codebook.data(),
                               tok_config.vocab_size, tok_config.code_dim,
                               phi_ptr));
    Tensor<float> recon = decoder_forward(tokenizer.params, fhat_t);
    const double mse_val = plain_mse(image, recon);

    const std::string& caption = samples[i].caption;
    if (!caption_embeddings.count(caption)) {
      Tensor<float> e_c = encode_text(var.text, tokenize(caption));
      caption_embeddings.emplace(caption, e_c.values());
    }
    Tensor<float> cond = Tensor<float>::from_values(
        {1, var.params.config.text_dim}, caption_embeddings.at(caption));
    std::vector<MultiScaleTokens> tokens = {enc.tokens};
    std::vector<std::vector<std::vector<float>>> contexts = {
        scale_context_features(enc.tokens, tok_config.schedule,
                               tokenizer.params.codebook.data(),
                               tok_config.code_dim, phi_ptr)};
    VarForwardResult<float> fwd =
        forward_teacher_forced(var.params, tokens, cond, contexts);
    const double nll_val = static_cast<double>(fwd.nll.item());

    csv << samples[i].id << "," << caption << "," << mse_val << "," << nll_val
        << "\n";
    summary.mean_reconstruction_mse += mse_val;
    summary.mean_nll += nll_val;
  }
  summary.num_samples = static_cast<int64_t>(samples.size());
  summary.mean_reconstruction_mse /= static_cast<double>(summary.num_samples);
  summary.mean_nll /= static_cast<double>(summary.num_samples);
  summary.uniform_baseline =
      static_cast<double>(tok_config.schedule.total_tokens()) *
      std::log(static_cast<double>(tok_config.vocab_size));
  return summary;
}

// ---------------------------------------------------------------------------
// position analysis

void write_position_report(const std::string& path,
                           const PositionScoreReport<float>& report) {
  std::ofstream csv = open_out(path);
  // score = attention mass the final-position query assigns to each key
  // position, averaged over heads, for identical content embeddings
  csv << "layer,position,score\n";
  for (size_t l = 0; l < report.layer_scores.size(); ++l) {
    for (size_t p = 0; p < report.layer_scores[l].size(); ++p) {
      csv << l << "," << p << "," << report.layer_scores[l][p] << "\n";
    }
  }
}

PositionScoreReport<float> read_position_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  PositionScoreReport<float> report;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line == "layer,position,score") {
      continue;
    }
    std::istringstream is(line);
    std::string layer_s, pos_s, score_s;
    std::getline(is, layer_s, ',');
    std::getline(is, pos_s, ',');
    std::getline(is, score_s, ',');
    const size_t layer = std::stoul(layer_s);
    const size_t pos = std::stoul(pos_s);
    if (report.layer_scores.size() <= layer) report.layer_scores.resize(layer + 1);
    if (report.layer_scores[layer].size() <= pos) {
      report.layer_scores[layer].resize(pos + 1);
    }
    report.layer_scores[layer][pos] = std::stof(score_s);
  }
  return report;
}

}  // namespace nextscale
