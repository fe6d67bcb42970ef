// Command-line entry point for the whole pipeline: dataset generation,
// two-stage training, sampling, evaluation and position analysis.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nextscale/pipeline.hpp"

namespace {

using nextscale::TrainConfig;

// every TrainConfig field is overridable from the command line; CLI values
// win over the config file
struct ConfigCli {
  std::string config_path;

  void attach(CLI::App* cmd, TrainConfig& config) {
    cmd->add_option("--config", config_path,
                    "flat key=value training config file");
    cmd->add_option("--steps", config.steps);
    cmd->add_option("--batch-size", config.batch_size);
    cmd->add_option("--lr", config.lr);
    cmd->add_option("--beta1", config.beta1);
    cmd->add_option("--beta2", config.beta2);
    cmd->add_option("--weight-decay", config.weight_decay);
    cmd->add_option("--cond-dropout", config.cond_dropout);
    cmd->add_option("--seed", config.seed);
    cmd->add_option("--vocab-size", config.vocab_size);
    cmd->add_option("--code-dim", config.code_dim);
    cmd->add_option("--hidden", config.hidden);
    cmd->add_option("--width", config.width);
    cmd->add_option("--depth", config.depth);
    cmd->add_option("--heads", config.heads);
    cmd->add_option("--text-dim", config.text_dim);
    cmd->add_option("--lambda-p", config.lambda_p);
    cmd->add_option("--beta-commit", config.beta_commit);
    cmd->add_option("--phi-conv", config.phi_conv);
    cmd->add_option("--pin-zero-code", config.pin_zero_code);
    cmd->add_option("--schedule", schedule_text,
                    "comma-separated HxW scale sizes, e.g. 1x1,2x2,4x4,8x8");
  }

  // file first, then any explicitly passed CLI option on top
  TrainConfig resolve(CLI::App* cmd, const TrainConfig& cli_values) {
    TrainConfig config;
    config.seed = nextscale::default_seed_from_env();
    if (!config_path.empty()) config = nextscale::load_train_config(config_path);
    auto take = [&](const std::string& name, auto member) {
      if (cmd->count(name) > 0) config.*member = cli_values.*member;
    };
    take("--steps", &TrainConfig::steps);
    take("--batch-size", &TrainConfig::batch_size);
    take("--lr", &TrainConfig::lr);
    take("--beta1", &TrainConfig::beta1);
    take("--beta2", &TrainConfig::beta2);
    take("--weight-decay", &TrainConfig::weight_decay);
    take("--cond-dropout", &TrainConfig::cond_dropout);
    take("--seed", &TrainConfig::seed);
    take("--vocab-size", &TrainConfig::vocab_size);
    take("--code-dim", &TrainConfig::code_dim);
    take("--hidden", &TrainConfig::hidden);
    take("--width", &TrainConfig::width);
    take("--depth", &TrainConfig::depth);
    take("--heads", &TrainConfig::heads);
    take("--text-dim", &TrainConfig::text_dim);
    take("--lambda-p", &TrainConfig::lambda_p);
    take("--beta-commit", &TrainConfig::beta_commit);
    take("--phi-conv", &TrainConfig::phi_conv);
    take("--pin-zero-code", &TrainConfig::pin_zero_code);
    if (cmd->count("--schedule") > 0) {
      nextscale::apply_config_entry(config, "schedule", schedule_text);
    }
    return config;
  }

 private:
  std::string schedule_text;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nextscale: multi-scale text-to-image pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a captioned shape dataset");
  int64_t gen_n = 160;
  uint64_t gen_seed = nextscale::default_seed_from_env();
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out, "output directory")->required();

  // train-tokenizer
  auto* train_tok = app.add_subcommand("train-tokenizer",
                                       "stage 1: multi-scale VQ tokenizer");
  TrainConfig tok_cli;
  ConfigCli tok_opts;
  tok_opts.attach(train_tok, tok_cli);
  std::string tok_data, tok_out;
  train_tok->add_option("--data", tok_data, "dataset manifest")->required();
  train_tok->add_option("--out", tok_out, "output directory")->required();

  // train-var
  auto* train_var = app.add_subcommand(
      "train-var", "stage 2: text-conditioned next-scale transformer");
  TrainConfig var_cli;
  ConfigCli var_opts;
  var_opts.attach(train_var, var_cli);
  std::string var_tokenizer, var_data, var_out;
  train_var->add_option("--tokenizer", var_tokenizer, "tokenizer checkpoint")
      ->required();
  train_var->add_option("--data", var_data, "dataset manifest")->required();
  train_var->add_option("--out", var_out, "output directory")->required();

  // sample
  auto* smp = app.add_subcommand("sample", "generate an image from a caption");
  std::string smp_caption, smp_tokenizer, smp_var, smp_out;
  float smp_t = 1.0f;
  uint64_t smp_seed = nextscale::default_seed_from_env();
  smp->add_option("--caption", smp_caption)->required();
  smp->add_option("--tokenizer", smp_tokenizer)->required();
  smp->add_option("--var", smp_var)->required();
  std::string smp_cfg_space = "embedding";
  smp->add_option("--t", smp_t, "guidance weight");
  smp->add_option("--cfg-space", smp_cfg_space,
                  "where guidance mixes: embedding|logits");
  smp->add_option("--seed", smp_seed);
  smp->add_option("--out", smp_out, "output path (PPM; token dump alongside)")
      ->required();

  // analyze-positions
  auto* ana = app.add_subcommand("analyze-positions",
                                 "text-encoder positional attention report");
  int64_t ana_len = 16;
  std::string ana_out;
  ana->add_option("--len", ana_len, "probe sequence length");
  ana->add_option("--out", ana_out, "output CSV")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "reconstruction + likelihood report");
  std::string evl_tokenizer, evl_var, evl_data, evl_out;
  evl->add_option("--tokenizer", evl_tokenizer)->required();
  evl->add_option("--var", evl_var)->required();
  evl->add_option("--data", evl_data, "dataset manifest")->required();
  evl->add_option("--out", evl_out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto samples = nextscale::generate_dataset(gen_n, gen_seed);
      const std::string manifest = nextscale::write_dataset(gen_out, samples);
      std::cout << "wrote " << samples.size() << " samples, manifest "
                << manifest << "\n";
    } else if (train_tok->parsed()) {
      TrainConfig config = tok_opts.resolve(train_tok, tok_cli);
      auto result = nextscale::train_stage1(config, tok_data, tok_out);
      std::cout << "stage 1 done: loss " << result.first_loss << " -> "
                << result.last_loss << ", checkpoint "
                << result.checkpoint_path << "\n";
    } else if (train_var->parsed()) {
      TrainConfig config = var_opts.resolve(train_var, var_cli);
      auto result =
          nextscale::train_stage2(config, var_tokenizer, var_data, var_out);
      std::cout << "stage 2 done: loss " << result.first_loss << " -> "
                << result.last_loss << ", checkpoint "
                << result.checkpoint_path << "\n";
    } else if (smp->parsed()) {
      auto tokenizer = nextscale::load_tokenizer_checkpoint(smp_tokenizer);
      auto var = nextscale::load_var_checkpoint(smp_var);
      auto output =
          nextscale::sample_to_image(smp_caption, tokenizer, var, smp_t,
                                     smp_seed,
                                     nextscale::parse_cfg_space(smp_cfg_space));
      std::string base = smp_out;
      if (base.size() > 4 && base.substr(base.size() - 4) == ".ppm") {
        base.resize(base.size() - 4);
      }
      nextscale::write_sample_output(base, output,
                                     tokenizer.params.config.schedule);
      std::cout << "wrote " << base << ".ppm and " << base << ".tokens.varc\n";
    } else if (ana->parsed()) {
      auto text = nextscale::init_text_encoder(
          nextscale::TextEncoderConfig<float>{}, nextscale::kTextEncoderSeed);
      auto report = nextscale::position_scores(text, ana_len);
      nextscale::write_position_report(ana_out, report);
      std::cout << "wrote " << ana_out << "\n";
    } else if (evl->parsed()) {
      auto tokenizer = nextscale::load_tokenizer_checkpoint(evl_tokenizer);
      auto var = nextscale::load_var_checkpoint(evl_var);
      auto summary = nextscale::evaluate(tokenizer, var, evl_data, evl_out);
      std::cout << "samples " << summary.num_samples << ", mean mse "
                << summary.mean_reconstruction_mse << ", mean nll "
                << summary.mean_nll << " (uniform baseline "
                << summary.uniform_baseline << ")\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
