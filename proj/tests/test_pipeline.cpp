#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nextscale/checkpoint.hpp"
#include "nextscale/dataset.hpp"
#include "nextscale/pipeline.hpp"

using namespace nextscale;
namespace fs = std::filesystem;

namespace {

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int64_t line_count(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  int64_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

TrainConfig tiny_stage1_config() {
  TrainConfig config;
  config.steps = 2;
  config.batch_size = 2;
  config.seed = 5;
  config.vocab_size = 8;
  config.code_dim = 4;
  config.hidden = 8;
  return config;
}

TrainConfig tiny_stage2_config() {
  TrainConfig config = tiny_stage1_config();
  config.width = 16;
  config.depth = 1;
  config.heads = 2;
  config.text_dim = 8;
  return config;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& child) const {
    return (path / child).string();
  }
};

}  // namespace

TEST_CASE("dataset generation is deterministic and balanced") {
  const auto a = generate_dataset(16, 9);
  const auto b = generate_dataset(16, 9);
  REQUIRE(a.size() == 16);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].caption == b[i].caption);
    CHECK(a[i].image.pixels == b[i].image.pixels);
  }
  const auto c = generate_dataset(16, 10);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) {
    differs = differs || a[i].image.pixels != c[i].image.pixels;
  }
  CHECK(differs);

  const auto big = generate_dataset(160, 1);
  std::vector<int> combos(8, 0);
  for (const auto& s : big) ++combos[static_cast<size_t>(s.color_id * 2 + s.shape_id)];
  for (int n : combos) CHECK(n == 20);
}

TEST_CASE("captions parse back to the generating class ids") {
  const auto classes = parse_caption("a red square on a black background");
  CHECK(classes.color_id == 0);
  CHECK(classes.shape_id == 0);
  CHECK(classes.background_id == 0);
  CHECK(parse_caption("nothing here").color_id == -1);

  for (const auto& s : generate_dataset(32, 2)) {
    const auto parsed = parse_caption(s.caption);
    CHECK(parsed.color_id == s.color_id);
    CHECK(parsed.shape_id == s.shape_id);
    CHECK(parsed.background_id == s.background_id);
    // captions use only known vocabulary words
    CHECK(detokenize(tokenize(s.caption)) == s.caption);
  }
}

TEST_CASE("rendered colors dominate the shape interior") {
  for (const auto& s : generate_dataset(64, 3)) {
    if (s.caption != "a red square on a black background") continue;
    double r = 0.0, g = 0.0, b = 0.0;
    int count = 0;
    for (int64_t y = 14; y < 18; ++y) {
      for (int64_t x = 14; x < 18; ++x) {
        r += s.image.at(0, y, x);
        g += s.image.at(1, y, x);
        b += s.image.at(2, y, x);
        ++count;
      }
    }
    CHECK(r / count > 0.8);
    CHECK(g / count < 0.2);
    CHECK(b / count < 0.2);
  }
}

TEST_CASE("dataset round-trips through the manifest") {
  TempDir dir("tmp_pipe_dataset");
  const auto samples = generate_dataset(8, 4);
  const std::string manifest = write_dataset(dir.str(), samples);
  const auto loaded = load_dataset(manifest);
  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].id == samples[i].id);
    CHECK(loaded[i].caption == samples[i].caption);
    REQUIRE(loaded[i].image.pixels.size() == samples[i].image.pixels.size());
    for (size_t p = 0; p < samples[i].image.pixels.size(); ++p) {
      // PPM quantizes to 8 bits
      CHECK(std::abs(loaded[i].image.pixels[p] - samples[i].image.pixels[p]) <
            0.5f / 255.0f + 1e-6f);
    }
  }
}

TEST_CASE("checkpoints round trip both dtypes and reject malformed files") {
  Checkpoint ck;
  ck.tag = ModuleTag::kTokenDump;
  ck.schedule = ScaleSchedule{{1, 1}, {2, 2}};
  CheckpointRecord floats;
  floats.shape = {2, 3};
  floats.f32 = {1.0f, -2.5f, 0.0f, 3.25f, 1e-30f, 4e8f};
  ck.records.emplace_back("a.weights", floats);
  CheckpointRecord ints;
  ints.int_dtype = true;
  ints.shape = {4};
  ints.i32 = {0, -7, 31, 2000000000};
  ck.records.emplace_back("b.tokens", ints);

  const std::string path = "tmp_pipe_ck.varc";
  save_checkpoint(path, ck);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.tag == ck.tag);
  CHECK(loaded.schedule == ck.schedule);
  REQUIRE(loaded.records.size() == 2);
  CHECK(loaded.records[0].first == "a.weights");
  CHECK(loaded.records[0].second.shape == floats.shape);
  CHECK(loaded.records[0].second.f32 == floats.f32);
  CHECK(loaded.records[1].second.i32 == ints.i32);
  CHECK(loaded.records[1].second.is_int());

  // empty record set is a valid file
  Checkpoint empty;
  empty.schedule = ScaleSchedule{{1, 1}};
  save_checkpoint(path, empty);
  CHECK(load_checkpoint(path).records.empty());

  // wrong magic
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("XXXX\x01\x00\x00\x00", 8);
  }
  CHECK_THROWS(load_checkpoint(path));

  // truncation anywhere in the payload
  save_checkpoint(path, ck);
  const auto bytes = file_bytes(path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  CHECK_THROWS(load_checkpoint(path));
  std::remove(path.c_str());
}

TEST_CASE("restore_params reproduces forward outputs bit-exactly") {
  TextEncoderConfig<float> config;
  config.width = 16;
  config.depth = 1;
  config.heads = 2;
  auto params = init_text_encoder(config, 13);
  const auto before = encode_text(params, tokenize("a red square"));

  auto snapshot = snapshot_params(ModuleTag::kTextEncoder, ScaleSchedule{{1, 1}},
                                  params.named());
  const std::string path = "tmp_pipe_text.varc";
  save_checkpoint(path, snapshot);

  for (auto& [name, t] : params.named()) {
    for (float& v : t.values()) v += 0.125f;
  }
  restore_params(load_checkpoint(path), params.named());
  const auto after = encode_text(params, tokenize("a red square"));
  REQUIRE(after.numel() == before.numel());
  for (int64_t i = 0; i < before.numel(); ++i) {
    CHECK(after.data()[i] == before.data()[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("config files parse with overrides and reject unknown keys") {
  const std::string path = "tmp_pipe_config.txt";
  {
    std::ofstream out(path);
    out << "# comment line\n"
        << "steps = 7\n"
        << "batch_size=3\n"
        << "lr = 0.5\n"
        << "phi_conv = true\n"
        << "pin_zero_code = false\n"
        << "schedule = 1x1,2x2,4x4\n"
        << "\n";
  }
  TrainConfig config = load_train_config(path);
  CHECK(config.steps == 7);
  CHECK(config.batch_size == 3);
  CHECK(config.lr == doctest::Approx(0.5f));
  CHECK(config.phi_conv);
  CHECK(!config.pin_zero_code);
  REQUIRE(config.schedule.num_scales() == 3);
  CHECK(config.schedule.sizes[2] == std::make_pair<int64_t, int64_t>(4, 4));

  apply_config_entry(config, "vocab_size", "12");
  CHECK(config.vocab_size == 12);
  CHECK_THROWS(apply_config_entry(config, "no_such_key", "1"));
  CHECK_THROWS(apply_config_entry(config, "phi_conv", "maybe"));
  CHECK_THROWS(load_train_config("missing_config.txt"));
  std::remove(path.c_str());

  setenv("NEXTSCALE_SEED", "321", 1);
  CHECK(default_seed_from_env() == 321);
  unsetenv("NEXTSCALE_SEED");
  CHECK(default_seed_from_env() == 0);
}

TEST_CASE("stage 1 honors lr=0, logs one metrics row per step, and is "
          "deterministic") {
  TempDir data_dir("tmp_pipe_s1_data");
  const std::string manifest =
      write_dataset(data_dir.str(), generate_dataset(8, 5));

  TrainConfig config = tiny_stage1_config();
  config.lr = 0.0f;
  config.steps = 1;
  TempDir frozen_dir("tmp_pipe_s1_frozen");
  auto frozen = train_stage1(config, manifest, frozen_dir.str());

  // lr=0 leaves the freshly initialized parameters untouched
  auto init = init_tokenizer_params(tokenizer_config_from(config), config.seed);
  auto loaded = load_tokenizer_checkpoint(frozen.checkpoint_path);
  for (auto& [name, t] : init.named()) {
    bool matched = false;
    for (auto& [lname, lt] : loaded.params.named()) {
      if (lname != name) continue;
      matched = true;
      CHECK(lt.values() == t.values());
    }
    CHECK(matched);
  }

  TrainConfig live = tiny_stage1_config();
  TempDir run_a("tmp_pipe_s1_a");
  TempDir run_b("tmp_pipe_s1_b");
  auto ra = train_stage1(live, manifest, run_a.str());
  auto rb = train_stage1(live, manifest, run_b.str());
  CHECK(file_bytes(ra.checkpoint_path) == file_bytes(rb.checkpoint_path));
  CHECK(file_bytes(ra.metrics_path) == file_bytes(rb.metrics_path));
  CHECK(line_count(ra.metrics_path) == live.steps + 1);  // header + rows
  CHECK(ra.first_loss > 0.0);
}

TEST_CASE("stage 2 starts near the uniform baseline and never touches the "
          "tokenizer") {
  TempDir data_dir("tmp_pipe_s2_data");
  const std::string manifest =
      write_dataset(data_dir.str(), generate_dataset(8, 6));

  TrainConfig config = tiny_stage2_config();
  TempDir tok_dir("tmp_pipe_s2_tok");
  auto stage1 = train_stage1(config, manifest, tok_dir.str());
  const auto tokenizer_bytes = file_bytes(stage1.checkpoint_path);

  TempDir var_a("tmp_pipe_s2_a");
  TempDir var_b("tmp_pipe_s2_b");
  auto ra = train_stage2(config, stage1.checkpoint_path, manifest, var_a.str());
  auto rb = train_stage2(config, stage1.checkpoint_path, manifest, var_b.str());

  CHECK(file_bytes(stage1.checkpoint_path) == tokenizer_bytes);
  CHECK(file_bytes(ra.checkpoint_path) == file_bytes(rb.checkpoint_path));
  CHECK(line_count(ra.metrics_path) == config.steps + 1);

  const auto var_ck = load_checkpoint(ra.checkpoint_path);
  for (const auto& [name, record] : var_ck.records) {
    const bool allowed = name.rfind("var.", 0) == 0 ||
                         name.rfind("text.", 0) == 0 || name == "meta.var";
    CHECK(allowed);  // in particular: no tokenizer records
  }

  const double baseline =
      config.schedule.total_tokens() * std::log(static_cast<double>(config.vocab_size));
  CHECK(std::abs(ra.first_nll - baseline) / baseline < 0.05);

  // schedule mismatch between checkpoints is rejected
  TrainConfig other = config;
  other.schedule = ScaleSchedule{{1, 1}, {8, 8}};
  TempDir var_c("tmp_pipe_s2_c");
  CHECK_THROWS(train_stage2(other, stage1.checkpoint_path, manifest, var_c.str()));
}

TEST_CASE("sampling is deterministic end to end and dumps readable tokens") {
  TempDir data_dir("tmp_pipe_sample_data");
  const std::string manifest =
      write_dataset(data_dir.str(), generate_dataset(8, 7));
  TrainConfig config = tiny_stage2_config();
  TempDir tok_dir("tmp_pipe_sample_tok");
  TempDir var_dir("tmp_pipe_sample_var");
  auto stage1 = train_stage1(config, manifest, tok_dir.str());
  auto stage2 = train_stage2(config, stage1.checkpoint_path, manifest,
                             var_dir.str());

  auto tokenizer = load_tokenizer_checkpoint(stage1.checkpoint_path);
  auto var = load_var_checkpoint(stage2.checkpoint_path);
  auto a = sample_to_image("a red square on a black background", tokenizer,
                           var, 1.0f, 42);
  auto b = sample_to_image("a red square on a black background", tokenizer,
                           var, 1.0f, 42);
  CHECK(a.tokens.maps == b.tokens.maps);
  CHECK(a.image.pixels == b.image.pixels);
  for (float v : a.image.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  TempDir out_dir("tmp_pipe_sample_out");
  write_sample_output(out_dir.sub("sample"), a, config.schedule);
  const auto dumped = read_token_dump(out_dir.sub("sample.tokens.varc"));
  CHECK(dumped.maps == a.tokens.maps);
  const Image ppm = read_ppm(out_dir.sub("sample.ppm"));
  CHECK(ppm.height == a.image.height);
  CHECK(ppm.width == a.image.width);

  // a different seed draws different tokens
  auto c = sample_to_image("a red square on a black background", tokenizer,
                           var, 1.0f, 43);
  CHECK(c.tokens.maps != a.tokens.maps);
}

TEST_CASE("position reports round trip through CSV") {
  TextEncoderConfig<float> config;
  auto text = init_text_encoder(config, kTextEncoderSeed);
  const auto report = position_scores(text, 12);
  const std::string path = "tmp_pipe_positions.csv";
  write_position_report(path, report);
  const auto loaded = read_position_report(path);
  REQUIRE(loaded.layer_scores.size() == report.layer_scores.size());
  for (size_t l = 0; l < report.layer_scores.size(); ++l) {
    REQUIRE(loaded.layer_scores[l].size() == report.layer_scores[l].size());
    for (size_t p = 0; p < report.layer_scores[l].size(); ++p) {
      CHECK(loaded.layer_scores[l][p] == report.layer_scores[l][p]);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("evaluate writes one row per sample plus a header") {
  TempDir data_dir("tmp_pipe_eval_data");
  const std::string manifest =
      write_dataset(data_dir.str(), generate_dataset(4, 8));
  TrainConfig config = tiny_stage2_config();
  TempDir tok_dir("tmp_pipe_eval_tok");
  TempDir var_dir("tmp_pipe_eval_var");
  auto stage1 = train_stage1(config, manifest, tok_dir.str());
  auto stage2 = train_stage2(config, stage1.checkpoint_path, manifest,
                             var_dir.str());
  auto tokenizer = load_tokenizer_checkpoint(stage1.checkpoint_path);
  auto var = load_var_checkpoint(stage2.checkpoint_path);

  const std::string csv = var_dir.sub("eval.csv");
  const auto summary = evaluate(tokenizer, var, manifest, csv);
  CHECK(summary.num_samples == 4);
  CHECK(summary.mean_reconstruction_mse >= 0.0);
  CHECK(summary.uniform_baseline ==
        doctest::Approx(config.schedule.total_tokens() *
                        std::log(static_cast<double>(config.vocab_size))));
  CHECK(line_count(csv) == 5);
}
