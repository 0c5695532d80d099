#include "causalvid/checkpoint.hpp"
#include "causalvid/data.hpp"
#include "causalvid/inference.hpp"
#include "causalvid/kv_cache.hpp"
#include "causalvid/metrics.hpp"
#include "causalvid/model.hpp"
#include "causalvid/schedule.hpp"
#include "causalvid/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <numeric>

namespace py = pybind11;
using namespace causalvid;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (frames, height, width, channels) float32 array <-> Video
Video to_video(const FloatArray& a) {
    if (a.ndim() != 4) {
        throw py::value_error("video must have shape (frames, height, width, channels)");
    }
    Video v(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
            static_cast<int>(a.shape(3)));
    std::copy(a.data(), a.data() + a.size(), v.data.begin());
    return v;
}

FloatArray from_video(const Video& v) {
    FloatArray a({v.frames, v.height, v.width, v.channels});
    std::copy(v.data.begin(), v.data.end(), a.mutable_data());
    return a;
}

std::vector<Video> to_videos(const std::vector<FloatArray>& arrays) {
    std::vector<Video> out;
    out.reserve(arrays.size());
    for (const auto& a : arrays) {
        out.push_back(to_video(a));
    }
    return out;
}

py::dict bench_to_dict(const BenchReport& r) {
    py::list chunks;
    for (const auto& c : r.chunks) {
        py::dict d;
        d["k"] = c.k;
        d["n"] = c.n;
        d["cached_ms"] = c.cached_ms;
        d["uncached_ms"] = c.uncached_ms;
        d["cached_score_rows"] = c.cached_score_rows;
        d["uncached_score_rows"] = c.uncached_score_rows;
        d["formula_cached"] = c.formula_cached;
        d["formula_uncached"] = c.formula_uncached;
        d["max_abs_diff"] = c.max_abs_diff;
        chunks.append(d);
    }
    py::dict d;
    d["chunks"] = chunks;
    d["cached_ms"] = r.cached_ms;
    d["uncached_ms"] = r.uncached_ms;
    d["cached_score_rows"] = r.cached_score_rows;
    d["uncached_score_rows"] = r.uncached_score_rows;
    d["speedup"] = r.speedup();
    d["score_ratio"] = r.score_ratio();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Causal video diffusion transformer with kv-cache generation";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("num_blocks", &ModelConfig::num_blocks)
        .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("patch_size", &ModelConfig::patch_size)
        .def_readwrite("max_frames", &ModelConfig::max_frames)
        .def_readwrite("height", &ModelConfig::height)
        .def_readwrite("width", &ModelConfig::width)
        .def_readwrite("channels", &ModelConfig::channels)
        .def_readwrite("caption_vocab_size", &ModelConfig::caption_vocab_size)
        .def_readwrite("caption_len", &ModelConfig::caption_len)
        .def_readwrite("mlp_ratio", &ModelConfig::mlp_ratio)
        .def_readwrite("prompt_enhance_len", &ModelConfig::prompt_enhance_len)
        .def_readwrite("causal", &ModelConfig::causal)
        .def_readwrite("literal_subprompt", &ModelConfig::literal_subprompt)
        .def_property_readonly("tokens_per_frame", &ModelConfig::tokens_per_frame)
        .def_property_readonly("frame_dim", &ModelConfig::frame_dim)
        .def("validate", &ModelConfig::validate)
        .def("to_dict", &model_config_to_map);

    py::class_<Schedule>(m, "Schedule")
        .def_readonly("T", &Schedule::T)
        .def_readonly("betas", &Schedule::betas)
        .def_readonly("alpha_bars", &Schedule::alpha_bars)
        .def_readonly("posterior_vars", &Schedule::posterior_vars)
        .def_readonly("ddim_steps", &Schedule::ddim_steps)
        .def("alpha_bar", &Schedule::alpha_bar, py::arg("t"));

    m.def("make_schedule", &make_schedule, py::arg("T") = 1000, py::arg("beta1") = 1e-4, py::arg("betaT") = 0.02,
          py::arg("num_ddim_steps") = 100);
    m.def("q_sample", &q_sample, py::arg("z0"), py::arg("t"), py::arg("eps"), py::arg("schedule"));
    m.def("ddim_step", &ddim_step, py::arg("pred_eps"), py::arg("z_t"), py::arg("t"), py::arg("t_prev"),
          py::arg("schedule"));
    m.def("covariance_fraction", &covariance_fraction, py::arg("v_raw"));
    m.def("cfg_combine", &cfg_combine, py::arg("eps_cond"), py::arg("eps_uncond"), py::arg("scale"));

    py::enum_<InitMode>(m, "InitMode")
        .value("ZERO_GATES", InitMode::kZeroGates)
        .value("RANDOM_ALL", InitMode::kRandomAll);

    py::class_<CausalVideoTransformer>(m, "Model")
        .def(py::init<ModelConfig>(), py::arg("config"))
        .def_property_readonly("config", &CausalVideoTransformer::config)
        .def_property_readonly("parameter_count", &CausalVideoTransformer::parameter_count)
        .def("init_parameters", &CausalVideoTransformer::init_parameters, py::arg("seed"),
             py::arg("mode") = InitMode::kZeroGates)
        .def(
            "get_parameters",
            [](const CausalVideoTransformer& self) {
                const auto& v = self.parameters().values();
                return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
            })
        .def(
            "set_parameters",
            [](CausalVideoTransformer& self, py::array_t<double, py::array::c_style | py::array::forcecast> a) {
                auto& v = self.parameters().values();
                if (static_cast<size_t>(a.size()) != v.size()) {
                    throw py::value_error("parameter vector has the wrong length");
                }
                std::copy(a.data(), a.data() + a.size(), v.begin());
            },
            py::arg("values"))
        .def(
            "forward",
            [](const CausalVideoTransformer& self, const Mat& z, const std::vector<int>& timesteps,
               const std::vector<int>& caption, std::vector<std::int64_t> frame_ids, int num_prompt) {
                ForwardInput in;
                in.z = z;
                in.timesteps = timesteps;
                if (frame_ids.empty()) {
                    frame_ids.resize(timesteps.size());
                    std::iota(frame_ids.begin(), frame_ids.end(), 0);
                }
                in.frame_ids = std::move(frame_ids);
                in.num_prompt = num_prompt;
                in.caption = caption;
                const NoisePrediction p = self.forward(in);
                return py::make_tuple(p.eps, p.v);
            },
            py::arg("z"), py::arg("timesteps"), py::arg("caption"),
            py::arg("frame_ids") = std::vector<std::int64_t>{}, py::arg("num_prompt") = 0,
            "Returns (eps, v), each frames x frame_dim.")
        .def(
            "save",
            [](const CausalVideoTransformer& self, const std::filesystem::path& path) {
                write_checkpoint(path, model_checkpoint(self));
            },
            py::arg("path"))
        .def_static(
            "load",
            [](const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); },
            py::arg("path"));

    py::class_<KVCache>(m, "KVCache")
        .def(py::init<int, int, int, int, int>(), py::arg("layers"), py::arg("capacity"),
             py::arg("tokens_per_frame"), py::arg("dim"), py::arg("bank_depth"))
        .def_property_readonly("capacity", &KVCache::capacity)
        .def_property_readonly("resident", &KVCache::resident)
        .def_property_readonly("evicted", &KVCache::evicted)
        .def("resident_ids", &KVCache::resident_ids)
        .def("append", &KVCache::append, py::arg("keys"), py::arg("values"), py::arg("bank"), py::arg("n_new"))
        .def(
            "keys",
            [](const KVCache& self, int layer, std::int64_t id) { return Mat(self.keys(layer, id)); },
            py::arg("layer"), py::arg("frame_id"))
        .def(
            "values",
            [](const KVCache& self, int layer, std::int64_t id) { return Mat(self.values(layer, id)); },
            py::arg("layer"), py::arg("frame_id"))
        .def("digest", &KVCache::digest);

    py::class_<InferenceConfig>(m, "InferenceConfig")
        .def(py::init<>())
        .def_readwrite("chunk_len", &InferenceConfig::chunk_len)
        .def_readwrite("cfg_scale", &InferenceConfig::cfg_scale)
        .def_readwrite("use_cache", &InferenceConfig::use_cache)
        .def_readwrite("seed", &InferenceConfig::seed);

    m.def(
        "generate",
        [](const CausalVideoTransformer& model, const Schedule& schedule, const FloatArray& first_frame,
           const std::vector<int>& caption, int num_chunks, const InferenceConfig& cfg) {
            Video out;
            {
                const Video first = to_video(first_frame);
                py::gil_scoped_release release;
                out = generate(model, schedule, first, caption, num_chunks, cfg);
            }
            return from_video(out);
        },
        py::arg("model"), py::arg("schedule"), py::arg("first_frame"), py::arg("caption"), py::arg("num_chunks"),
        py::arg("config") = InferenceConfig{});

    m.def(
        "bench_cache",
        [](const CausalVideoTransformer& model, const Schedule& schedule, int num_chunks, int chunk_len,
           int prefix_frames, double cfg_scale, std::uint64_t seed) {
            BenchConfig bc;
            bc.num_chunks = num_chunks;
            bc.chunk_len = chunk_len;
            bc.prefix_frames = prefix_frames;
            bc.cfg_scale = cfg_scale;
            bc.seed = seed;
            return bench_to_dict(bench_cache(model, schedule, bc));
        },
        py::arg("model"), py::arg("schedule"), py::arg("num_chunks") = 1, py::arg("chunk_len") = 16,
        py::arg("prefix_frames") = 0, py::arg("cfg_scale") = 7.5, py::arg("seed") = 0);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("seq_len", &TrainConfig::seq_len)
        .def_readwrite("chunk_len", &TrainConfig::chunk_len)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("total_steps", &TrainConfig::total_steps)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("caption_dropout_p", &TrainConfig::caption_dropout_p)
        .def_readwrite("loss_vlb_weight", &TrainConfig::loss_vlb_weight)
        .def_readwrite("frame_interval", &TrainConfig::frame_interval)
        .def_readwrite("log_interval", &TrainConfig::log_interval)
        .def_readwrite("checkpoint_interval", &TrainConfig::checkpoint_interval)
        .def_readwrite("seed", &TrainConfig::seed);

    m.def("prompt_length_support", &prompt_length_support, py::arg("n"), py::arg("N"));

    m.def(
        "train",
        [](CausalVideoTransformer& model, const std::filesystem::path& data_dir, const TrainConfig& cfg,
           const Schedule& schedule, const std::filesystem::path& out_dir) {
            const Dataset data = load_dataset(data_dir, cfg.seq_len, cfg.frame_interval);
            TrainRun run;
            {
                py::gil_scoped_release release;
                run = train(model, data, cfg, schedule, {out_dir, {}});
            }
            py::list log;
            for (const auto& e : run.log) {
                py::dict d;
                d["step"] = e.step;
                d["loss_simple"] = e.loss_simple;
                d["loss_vlb"] = e.loss_vlb;
                log.append(d);
            }
            return log;
        },
        py::arg("model"), py::arg("data_dir"), py::arg("config"), py::arg("schedule"),
        py::arg("out_dir") = std::filesystem::path{},
        "Trains in place and returns the per-step loss log.");

    py::class_<DatasetSpec>(m, "DatasetSpec")
        .def(py::init<>())
        .def_readwrite("count", &DatasetSpec::count)
        .def_readwrite("frames", &DatasetSpec::frames)
        .def_readwrite("height", &DatasetSpec::height)
        .def_readwrite("width", &DatasetSpec::width)
        .def_readwrite("channels", &DatasetSpec::channels)
        .def_readwrite("seed", &DatasetSpec::seed);

    m.def(
        "make_dataset",
        [](const std::filesystem::path& dir, const DatasetSpec& spec) {
            py::list out;
            for (const auto& r : make_dataset(dir, spec)) {
                out.append(py::make_tuple(r.path, r.caption));
            }
            return out;
        },
        py::arg("dir"), py::arg("spec") = DatasetSpec{}, "Returns (path, caption) pairs.");
    m.def(
        "read_video", [](const std::filesystem::path& p) { return from_video(read_video(p)); }, py::arg("path"));
    m.def(
        "write_video", [](const std::filesystem::path& p, const FloatArray& a) { write_video(p, to_video(a)); },
        py::arg("path"), py::arg("video"));
    m.def(
        "encode_caption",
        [](int shape, int color, int direction) {
            return encode_caption({static_cast<ShapeKind>(shape), color, direction});
        },
        py::arg("shape"), py::arg("color"), py::arg("direction"));
    m.def(
        "decode_caption",
        [](const CaptionTokens& t) {
            const CaptionAttrs a = decode_caption(t);
            return py::make_tuple(static_cast<int>(a.shape), a.color, a.direction);
        },
        py::arg("tokens"));

    m.def(
        "frame_differencing", [](const FloatArray& v) { return frame_differencing(to_video(v)); }, py::arg("video"));
    m.def("junction_indices", &junction_indices, py::arg("curve_len"), py::arg("n"), py::arg("offset"));
    m.def("delta_edge_fd", &delta_edge_fd, py::arg("curve"), py::arg("n"), py::arg("offset") = 1,
          py::arg("per_chunk") = false);
    m.def(
        "frechet_distance",
        [](const Mat& a, const Mat& b) { return frechet_distance(frechet_stats(a), frechet_stats(b)); },
        py::arg("samples_a"), py::arg("samples_b"), "Fréchet distance between the Gaussian fits of two row sets.");
    m.def(
        "step_fvd",
        [](const std::vector<FloatArray>& videos, int n, int offset, std::uint64_t seed) {
            return step_fvd(to_videos(videos), n, offset, seed);
        },
        py::arg("videos"), py::arg("n"), py::arg("offset") = 1, py::arg("extractor_seed") = 0);
}
