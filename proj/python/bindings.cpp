#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>
#include <torch/torch.h>

#include "s2ig/audio.hpp"
#include "s2ig/commands.hpp"
#include "s2ig/error.hpp"
#include "s2ig/experiment.hpp"
#include "s2ig/log.hpp"
#include "s2ig/metrics.hpp"
#include "s2ig/rdg.hpp"
#include "s2ig/report.hpp"
#include "s2ig/sen.hpp"

namespace py = pybind11;
using namespace s2ig;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int64_t, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const DoubleArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

torch::Tensor to_tensor(const IntArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<int64_t*>(a.data()), shape, torch::kInt64).clone();
}

py::array_t<float> to_numpy(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat32).contiguous();
  py::array_t<float> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(c.numel()));
  return out;
}

double scalar(const torch::Tensor& t) { return t.item<double>(); }

py::dict train_result(const TrainResult& r) {
  py::dict d;
  d["run_dir"] = r.run_dir;
  d["checkpoint"] = r.checkpoint;
  d["history"] = r.history;
  d["epoch"] = r.epoch;
  d["finished"] = r.finished;
  return d;
}

RunArgs run_args(const std::optional<std::filesystem::path>& manifest, const std::optional<std::filesystem::path>& out,
                 const std::vector<std::string>& overrides, const std::optional<std::filesystem::path>& config,
                 const std::optional<std::string>& profile, const std::optional<std::uint64_t>& seed,
                 const std::optional<std::filesystem::path>& resume, const std::optional<int>& max_epochs) {
  RunArgs a;
  a.manifest = manifest;
  a.out = out;
  a.overrides = overrides;
  a.config = config;
  a.profile = profile;
  a.seed = seed;
  a.resume = resume;
  a.max_epochs = max_epochs;
  return a;
}

}  // namespace

PYBIND11_MODULE(_s2ig, m) {
  m.doc() = "Speech-to-image generation: SEN/RDG training, generation and IS/FID/mAP evaluation";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<CompatibilityError>(m, "CompatibilityError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  (void)validation;

  m.def("set_quiet", &log::set_quiet, py::arg("quiet") = true);
  m.def("set_num_threads", [](int n) { torch::set_num_threads(n); }, py::arg("n"));

  // metrics
  m.def(
      "inception_score",
      [](const Matrix& p, int splits) {
        const auto is = inception_score(p, splits);
        return py::make_tuple(is.mean, is.std);
      },
      py::arg("probabilities"), py::arg("splits") = 10, "(mean, std) of the Inception Score over splits");
  m.def("frechet_distance", &frechet_distance, py::arg("real"), py::arg("fake"));
  m.def(
      "average_precision", [](const std::vector<bool>& r) {
        std::unique_ptr<bool[]> flags(new bool[r.size()]);
        std::copy(r.begin(), r.end(), flags.get());
        return average_precision(std::span<const bool>(flags.get(), r.size()));
      },
      py::arg("ranked_relevance"));
  m.def("expected_random_average_precision", &expected_random_average_precision, py::arg("total"),
        py::arg("relevant"));
  m.def(
      "retrieval_map",
      [](const Matrix& q, const std::vector<int>& qc, const Matrix& g, const std::vector<int>& gc) {
        return retrieval_map(q, qc, g, gc).map;
      },
      py::arg("queries"), py::arg("query_classes"), py::arg("gallery"), py::arg("gallery_classes"));

  // objectives
  m.def(
      "matching_loss",
      [](const DoubleArray& speech, const DoubleArray& image, const IntArray& classes, int num_classes, double beta) {
        const auto l = matching_loss(to_tensor(speech), to_tensor(image), to_tensor(classes), num_classes, beta);
        return py::make_tuple(scalar(l.speech_to_image), scalar(l.image_to_speech));
      },
      py::arg("speech"), py::arg("image"), py::arg("classes"), py::arg("num_classes"), py::arg("beta") = 10.0,
      "(speech-to-image, image-to-speech) masked matching losses");
  m.def(
      "distinctive_loss",
      [](const DoubleArray& speech_logits, const DoubleArray& image_logits, const IntArray& classes) {
        return scalar(distinctive_loss(to_tensor(speech_logits), to_tensor(image_logits), to_tensor(classes)));
      },
      py::arg("speech_logits"), py::arg("image_logits"), py::arg("classes"));
  m.def(
      "discriminator_loss",
      [](const DoubleArray& real_u, const DoubleArray& real_c, const DoubleArray& fake_u, const DoubleArray& fake_c) {
        return scalar(discriminator_loss({to_tensor(real_u), to_tensor(real_c)}, {to_tensor(fake_u), to_tensor(fake_c)}));
      },
      py::arg("real_unconditional"), py::arg("real_conditional"), py::arg("fake_unconditional"),
      py::arg("fake_conditional"));
  m.def(
      "relation_loss",
      [](const DoubleArray& positive, const DoubleArray& negative, const DoubleArray& undesired,
         std::optional<DoubleArray> fake) {
        RelationLogits l{to_tensor(positive), to_tensor(negative), to_tensor(undesired),
                         fake ? to_tensor(*fake) : torch::Tensor()};
        return scalar(relation_loss(l).total);
      },
      py::arg("positive"), py::arg("negative"), py::arg("undesired"), py::arg("fake") = py::none());
  m.def(
      "kl_divergence", [](const DoubleArray& mu, const DoubleArray& logvar) {
        return scalar(kl_divergence(to_tensor(mu), to_tensor(logvar)));
      },
      py::arg("mu"), py::arg("logvar"));

  // audio
  m.def(
      "log_mel",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& wave, int sample_rate, int num_mel,
         bool normalize) {
        FrontendConfig config;
        config.num_mel = num_mel;
        config.normalize = normalize;
        const auto spec = compute_log_mel(std::span<const float>(wave.data(), static_cast<std::size_t>(wave.size())),
                                          sample_rate, config);
        return to_numpy(spec.frames);
      },
      py::arg("waveform"), py::arg("sample_rate") = 16000, py::arg("num_mel") = 40, py::arg("normalize") = false,
      "[frames, num_mel] log-Mel spectrogram");

  // configuration
  m.def("config_keys", [] {
    py::list out;
    for (const auto& k : config_keys()) {
      out.append(py::make_tuple(std::string(k.section) + "." + k.name, k.ci_default, k.full_default, k.help));
    }
    return out;
  });
  m.def(
      "default_config", [](const std::string& profile) { return ExperimentConfig::defaults(profile).echo(); },
      py::arg("profile") = "ci", "canonical INI text of a profile's defaults");

  // commands
  m.def(
      "make_dataset",
      [](const std::filesystem::path& out, std::uint64_t seed, int classes, int per_class) {
        MakeDatasetArgs a;
        a.out_dir = out;
        a.seed = seed;
        a.num_classes = classes;
        a.per_class = per_class;
        const auto r = cmd_make_dataset(a);
        return py::make_tuple(r.manifest, r.corpus_hash);
      },
      py::arg("out"), py::arg("seed") = 7, py::arg("classes") = 8, py::arg("per_class") = 10,
      "(manifest path, corpus sha256)");
  m.def(
      "train_sen",
      [](std::optional<std::filesystem::path> manifest, std::optional<std::filesystem::path> out,
         std::vector<std::string> overrides, std::optional<std::filesystem::path> config,
         std::optional<std::string> profile, std::optional<std::uint64_t> seed,
         std::optional<std::filesystem::path> resume, std::optional<int> max_epochs) {
        const auto args = run_args(manifest, out, overrides, config, profile, seed, resume, max_epochs);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = cmd_train_sen(args);
        }
        return train_result(r);
      },
      py::arg("manifest") = py::none(), py::arg("out") = py::none(), py::arg("overrides") = std::vector<std::string>{},
      py::arg("config") = py::none(), py::arg("profile") = py::none(), py::arg("seed") = py::none(),
      py::arg("resume") = py::none(), py::arg("max_epochs") = py::none());
  m.def(
      "train_rdg",
      [](std::optional<std::filesystem::path> manifest, std::optional<std::filesystem::path> sen,
         std::optional<std::filesystem::path> out, std::vector<std::string> overrides,
         std::vector<std::string> ablations, std::optional<std::filesystem::path> config,
         std::optional<std::string> profile, std::optional<std::uint64_t> seed,
         std::optional<std::filesystem::path> resume, std::optional<int> max_epochs) {
        TrainRdgArgs args;
        args.run = run_args(manifest, out, overrides, config, profile, seed, resume, max_epochs);
        args.sen_checkpoint = sen;
        args.ablations = ablations;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = cmd_train_rdg(args);
        }
        return train_result(r);
      },
      py::arg("manifest") = py::none(), py::arg("sen") = py::none(), py::arg("out") = py::none(),
      py::arg("overrides") = std::vector<std::string>{}, py::arg("ablations") = std::vector<std::string>{},
      py::arg("config") = py::none(), py::arg("profile") = py::none(), py::arg("seed") = py::none(),
      py::arg("resume") = py::none(), py::arg("max_epochs") = py::none());
  m.def(
      "train_backbone",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, std::vector<std::string> overrides) {
        TrainBackboneArgs args;
        args.run.manifest = manifest;
        args.run.overrides = overrides;
        args.out = out;
        py::gil_scoped_release release;
        return cmd_train_backbone(args);
      },
      py::arg("manifest"), py::arg("out"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "generate",
      [](const std::filesystem::path& model, const std::filesystem::path& out,
         std::optional<std::filesystem::path> manifest, std::string split, std::vector<std::filesystem::path> audio,
         int class_id, std::uint64_t seed, int per_caption, bool all_scales) {
        GenerateArgs args;
        args.checkpoint = model;
        args.out_dir = out;
        args.manifest = manifest;
        args.split = split;
        args.audio = audio;
        args.class_id = class_id;
        args.seed = seed;
        args.per_caption = per_caption;
        args.all_scales = all_scales;
        GenerateResult r;
        {
          py::gil_scoped_release release;
          r = cmd_generate(args);
        }
        py::dict d;
        d["out_dir"] = r.out_dir;
        d["images"] = r.images;
        d["failed"] = r.failed;
        return d;
      },
      py::arg("model"), py::arg("out"), py::arg("manifest") = py::none(), py::arg("split") = "test",
      py::arg("audio") = std::vector<std::filesystem::path>{}, py::arg("class_id") = -1, py::arg("seed") = 7,
      py::arg("per_caption") = 1, py::arg("all_scales") = false);
  m.def(
      "evaluate",
      [](const std::filesystem::path& real, const std::filesystem::path& fake, const std::filesystem::path& out,
         std::optional<std::filesystem::path> backbone, std::vector<std::string> overrides, std::string real_split) {
        EvaluateArgs args;
        args.real = real;
        args.fake = fake;
        args.out = out;
        args.backbone = backbone;
        args.overrides = overrides;
        args.real_split = real_split;
        EvaluateResult r;
        {
          py::gil_scoped_release release;
          r = cmd_evaluate(args);
        }
        py::dict d;
        d["report"] = r.report_path;
        d["is_mean"] = r.report.is_mean;
        d["is_std"] = r.report.is_std;
        d["fid"] = r.report.fid;
        d["map"] = r.report.map;
        return d;
      },
      py::arg("real"), py::arg("fake"), py::arg("out"), py::arg("backbone") = py::none(),
      py::arg("overrides") = std::vector<std::string>{}, py::arg("real_split") = "test");
}
