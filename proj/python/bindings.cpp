// Python bindings for the main pipeline operations: text encoding,
// multi-scale tokenization, training, sampling and evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "nextscale/pipeline.hpp"

namespace py = pybind11;
using namespace nextscale;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MapList = std::vector<py::array_t<int64_t>>;

py::array_t<float> tensor_to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data(),
              static_cast<size_t>(t.numel()) * sizeof(float));
  return out;
}

py::array_t<float> image_to_array(const Image& image) {
  py::array_t<float> out({py::ssize_t(3), py::ssize_t(image.height),
                          py::ssize_t(image.width)});
  std::memcpy(out.mutable_data(), image.pixels.data(),
              image.pixels.size() * sizeof(float));
  return out;
}

MapList tokens_to_arrays(const MultiScaleTokens& tokens,
                         const ScaleSchedule& schedule) {
  MapList out;
  for (size_t k = 0; k < tokens.maps.size(); ++k) {
    const auto [h, w] = schedule.sizes[k];
    py::array_t<int64_t> map({py::ssize_t(h), py::ssize_t(w)});
    std::memcpy(map.mutable_data(), tokens.maps[k].data(),
                tokens.maps[k].size() * sizeof(int64_t));
    out.push_back(std::move(map));
  }
  return out;
}

MultiScaleTokens arrays_to_tokens(const MapList& maps) {
  MultiScaleTokens tokens;
  for (const auto& map : maps) {
    auto flat = py::array_t<int64_t, py::array::c_style | py::array::forcecast>(
        map);
    const int64_t* data = flat.data();
    tokens.maps.emplace_back(data, data + flat.size());
  }
  return tokens;
}

// the fixed deterministic text encoder, built once
const TextEncoderParams<float>& builtin_text_encoder() {
  static TextEncoderParams<float> params =
      init_text_encoder(TextEncoderConfig<float>{}, kTextEncoderSeed);
  return params;
}

py::dict stage_result_dict(const StageResult& r) {
  py::dict out;
  out["checkpoint_path"] = r.checkpoint_path;
  out["metrics_path"] = r.metrics_path;
  out["first_loss"] = r.first_loss;
  out["last_loss"] = r.last_loss;
  out["first_mse"] = r.first_mse;
  out["last_mse"] = r.last_mse;
  out["first_nll"] = r.first_nll;
  out["last_nll"] = r.last_nll;
  return out;
}

}  // namespace

PYBIND11_MODULE(_nextscale, m) {
  m.doc() = "multi-scale text-to-image pipeline";

  // ---- text ----
  m.def("tokenize", [](const std::string& text) { return tokenize(text); },
        py::arg("text"));
  m.def("detokenize",
        [](const std::vector<int64_t>& ids) { return detokenize(ids); },
        py::arg("ids"));
  m.def(
      "encode_text",
      [](const std::string& text) {
        return tensor_to_array(encode_text(builtin_text_encoder(),
                                           tokenize(text)));
      },
      py::arg("text"), "Deterministic caption embedding (1-D float32).");
  m.def(
      "position_scores",
      [](int64_t n) {
        const auto report = position_scores(builtin_text_encoder(), n);
        const py::ssize_t depth =
            static_cast<py::ssize_t>(report.layer_scores.size());
        py::array_t<float> out({depth, py::ssize_t(n)});
        for (py::ssize_t l = 0; l < depth; ++l) {
          std::memcpy(out.mutable_data(l, 0),
                      report.layer_scores[static_cast<size_t>(l)].data(),
                      static_cast<size_t>(n) * sizeof(float));
        }
        return out;
      },
      py::arg("n"), "Per-layer positional attention scores, shape (depth, n).");

  // ---- training config ----
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("cond_dropout", &TrainConfig::cond_dropout)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("vocab_size", &TrainConfig::vocab_size)
      .def_readwrite("code_dim", &TrainConfig::code_dim)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("width", &TrainConfig::width)
      .def_readwrite("depth", &TrainConfig::depth)
      .def_readwrite("heads", &TrainConfig::heads)
      .def_readwrite("text_dim", &TrainConfig::text_dim)
      .def_readwrite("lambda_p", &TrainConfig::lambda_p)
      .def_readwrite("beta_commit", &TrainConfig::beta_commit)
      .def_readwrite("phi_conv", &TrainConfig::phi_conv)
      .def_readwrite("pin_zero_code", &TrainConfig::pin_zero_code)
      .def_property(
          "schedule",
          [](const TrainConfig& c) {
            std::string out;
            for (const auto& [h, w] : c.schedule.sizes) {
              if (!out.empty()) out += ",";
              out += std::to_string(h) + "x" + std::to_string(w);
            }
            return out;
          },
          [](TrainConfig& c, const std::string& text) {
            apply_config_entry(c, "schedule", text);
          });

  // ---- dataset + training ----
  m.def(
      "generate_dataset",
      [](const std::string& out_dir, int64_t n, uint64_t seed) {
        return write_dataset(out_dir, generate_dataset(n, seed));
      },
      py::arg("out_dir"), py::arg("n") = 160, py::arg("seed") = 0,
      "Render the shape dataset; returns the manifest path.");
  m.def(
      "train_stage1",
      [](const TrainConfig& config, const std::string& manifest,
         const std::string& out_dir) {
        return stage_result_dict(train_stage1(config, manifest, out_dir));
      },
      py::arg("config"), py::arg("manifest"), py::arg("out_dir"));
  m.def(
      "train_stage2",
      [](const TrainConfig& config, const std::string& tokenizer_ckpt,
         const std::string& manifest, const std::string& out_dir) {
        return stage_result_dict(
            train_stage2(config, tokenizer_ckpt, manifest, out_dir));
      },
      py::arg("config"), py::arg("tokenizer_ckpt"), py::arg("manifest"),
      py::arg("out_dir"));

  // ---- tokenizer round trips ----
  m.def(
      "encode_image",
      [](const std::string& tokenizer_ckpt, const FloatArray& image) {
        if (image.ndim() != 3 || image.shape(0) != 3) {
          throw std::invalid_argument("encode_image: expected (3, H, W)");
        }
        auto tokenizer = load_tokenizer_checkpoint(tokenizer_ckpt);
        auto& p = tokenizer.params;
        NoGradGuard no_grad;
        auto images = Tensor<float>::zeros(
            {1, 3, image.shape(1), image.shape(2)});
        std::memcpy(images.values().data(), image.data(),
                    static_cast<size_t>(images.numel()) * sizeof(float));
        const auto f = encoder_forward(p, images);
        const PhiRaw<float> phi = p.phi_raw();
        const auto enc = multi_scale_encode(
            f.data(), p.config.code_dim, p.config.schedule, p.codebook.data(),
            p.config.vocab_size, p.config.phi_conv ? &phi : nullptr);
        return tokens_to_arrays(enc.tokens, p.config.schedule);
      },
      py::arg("tokenizer_ckpt"), py::arg("image"),
      "Image (3, H, W) in [0,1] -> per-scale token maps.");
  m.def(
      "decode_tokens",
      [](const std::string& tokenizer_ckpt, const MapList& maps) {
        auto tokenizer = load_tokenizer_checkpoint(tokenizer_ckpt);
        auto& p = tokenizer.params;
        NoGradGuard no_grad;
        const auto tokens = arrays_to_tokens(maps);
        const PhiRaw<float> phi = p.phi_raw();
        const auto fhat = multi_scale_decode_raw(
            tokens, p.config.schedule, p.codebook.data(), p.config.vocab_size,
            p.config.code_dim, p.config.phi_conv ? &phi : nullptr);
        auto fhat_t = Tensor<float>::zeros({1, p.config.code_dim,
                                            p.config.schedule.final_h(),
                                            p.config.schedule.final_w()});
        std::copy(fhat.begin(), fhat.end(), fhat_t.values().begin());
        const auto recon = decoder_forward(p, fhat_t);
        py::array_t<float> out({py::ssize_t(3), py::ssize_t(recon.shape()[2]),
                                py::ssize_t(recon.shape()[3])});
        std::memcpy(out.mutable_data(), recon.data(),
                    static_cast<size_t>(recon.numel()) * sizeof(float));
        return out;
      },
      py::arg("tokenizer_ckpt"), py::arg("maps"),
      "Per-scale token maps -> reconstructed image (3, H, W).");

  // ---- sampling + evaluation ----
  m.def(
      "sample",
      [](const std::string& caption, const std::string& tokenizer_ckpt,
         const std::string& var_ckpt, float t, uint64_t seed,
         const std::string& cfg_space) {
        auto tokenizer = load_tokenizer_checkpoint(tokenizer_ckpt);
        auto var = load_var_checkpoint(var_ckpt);
        const auto out = sample_to_image(caption, tokenizer, var, t, seed,
                                         parse_cfg_space(cfg_space));
        return py::make_tuple(
            image_to_array(out.image),
            tokens_to_arrays(out.tokens, tokenizer.params.config.schedule));
      },
      py::arg("caption"), py::arg("tokenizer_ckpt"), py::arg("var_ckpt"),
      py::arg("t") = 1.0f, py::arg("seed") = 0,
      py::arg("cfg_space") = "embedding",
      "Caption -> (image (3, H, W), per-scale token maps).");
  m.def(
      "evaluate",
      [](const std::string& tokenizer_ckpt, const std::string& var_ckpt,
         const std::string& manifest, const std::string& out_csv) {
        auto tokenizer = load_tokenizer_checkpoint(tokenizer_ckpt);
        auto var = load_var_checkpoint(var_ckpt);
        const auto summary = evaluate(tokenizer, var, manifest, out_csv);
        py::dict out;
        out["mean_reconstruction_mse"] = summary.mean_reconstruction_mse;
        out["mean_nll"] = summary.mean_nll;
        out["uniform_baseline"] = summary.uniform_baseline;
        out["num_samples"] = summary.num_samples;
        return out;
      },
      py::arg("tokenizer_ckpt"), py::arg("var_ckpt"), py::arg("manifest"),
      py::arg("out_csv"));

  // ---- image files ----
  m.def(
      "read_ppm",
      [](const std::string& path) { return image_to_array(read_ppm(path)); },
      py::arg("path"));
  m.def(
      "write_ppm",
      [](const std::string& path, const FloatArray& image) {
        if (image.ndim() != 3 || image.shape(0) != 3) {
          throw std::invalid_argument("write_ppm: expected (3, H, W)");
        }
        Image out;
        out.height = image.shape(1);
        out.width = image.shape(2);
        out.pixels.assign(image.data(), image.data() + image.size());
        write_ppm(path, out);
      },
      py::arg("path"), py::arg("image"));
}
