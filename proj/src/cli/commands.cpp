#include "commands.hpp"

#include "causalvid/attention.hpp"
#include "causalvid/checkpoint.hpp"
#include "causalvid/data.hpp"
#include "causalvid/image_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace causalvid::cli {

namespace fs = std::filesystem;

void finalize(RunConfig& cfg) {
    cfg.train.chunk_len = cfg.chunk_len;
    cfg.train.seed = cfg.seed;
    cfg.validate();
}

Schedule schedule_for(const RunConfig& cfg) {
    return make_schedule(cfg.diffusion_steps, cfg.beta1, cfg.betaT, cfg.ddim_steps);
}

std::vector<ClipRecord> cmd_make_data(const RunConfig& cfg) {
    DatasetSpec spec;
    spec.count = cfg.data_count;
    spec.frames = cfg.data_frames;
    spec.height = cfg.model.height;
    spec.width = cfg.model.width;
    spec.channels = cfg.model.channels;
    spec.seed = cfg.seed;
    auto records = make_dataset(cfg.data_dir, spec);
    write_resolved_config(cfg.data_dir, cfg);
    return records;
}

TrainRun cmd_train(const RunConfig& cfg, const std::string& resume) {
    const Dataset data = load_dataset(cfg.data_dir, cfg.train.seq_len, cfg.train.frame_interval);
    CausalVideoTransformer model(cfg.model);
    model.init_parameters(cfg.seed);
    write_resolved_config(cfg.out, cfg);
    TrainOutputs outputs;
    outputs.dir = cfg.out;
    outputs.resume_from = resume;
    const Schedule s = schedule_for(cfg);
    return train(model, data, cfg.train, s, outputs, [&](const TrainLogEntry& e) {
        if (e.step % 100 == 0 || e.step + 1 == cfg.train.total_steps) {
            std::cerr << "step " << e.step << " loss_simple " << e.loss_simple << " loss_vlb " << e.loss_vlb << '\n';
        }
    });
}

namespace {

CausalVideoTransformer load_model(const std::string& path) {
    if (path.empty()) {
        throw ConfigError("a checkpoint is required (--checkpoint or checkpoint = ...)");
    }
    return model_from_checkpoint(read_checkpoint(path));
}

std::vector<int> parse_caption(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("caption must be comma-separated token ids, got '" + text + "'");
        }
    }
    return out;
}

}  // namespace

Video cmd_generate(const RunConfig& cfg, const GenerateRequest& req) {
    const CausalVideoTransformer model = load_model(cfg.checkpoint);
    const ModelConfig& mc = model.config();
    Video first;
    std::vector<int> caption = req.caption;
    if (!req.first_frame.empty()) {
        first = slice_frames(read_video(req.first_frame), 0, 1);
    } else if (req.data_index) {
        const auto records = read_manifest(fs::path(cfg.data_dir) / "manifest.tsv");
        if (*req.data_index < 0 || *req.data_index >= static_cast<int>(records.size())) {
            throw ConfigError("--from-data index outside the dataset");
        }
        const auto& rec = records[static_cast<size_t>(*req.data_index)];
        first = slice_frames(read_video(fs::path(cfg.data_dir) / rec.path), 0, 1);
        if (caption.empty()) {
            caption = rec.caption;
        }
    } else {
        throw ConfigError("generate needs --first-frame or --from-data");
    }
    if (caption.empty()) {
        throw ConfigError("generate needs --caption when the first frame does not come from the dataset");
    }
    if (static_cast<int>(caption.size()) != mc.caption_len) {
        throw ConfigError("caption must have " + std::to_string(mc.caption_len) + " tokens");
    }
    if (first.height != mc.height || first.width != mc.width || first.channels != mc.channels) {
        throw ConfigError("first frame shape does not match the checkpoint's latent shape");
    }
    InferenceConfig ic;
    ic.chunk_len = cfg.chunk_len;
    ic.cfg_scale = cfg.cfg_scale;
    ic.use_cache = cfg.use_cache;
    ic.seed = cfg.seed;
    const Video out = generate(model, schedule_for(cfg), first, caption, cfg.num_chunks, ic);
    const fs::path dir = cfg.out;
    write_resolved_config(dir, cfg);
    write_video(dir / "generated.cvid", out);
    if (req.png) {
        export_png_frames(dir / "frames", out);
    }
    if (req.preview) {
        write_y4m(dir / "preview.y4m", out);
    }
    return out;
}

EvalReport cmd_eval(const RunConfig& cfg, const std::string& video_dir) {
    EvalReport rep;
    std::vector<fs::path> paths;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(video_dir, ec)) {
        if (entry.path().extension() == ".cvid") {
            paths.push_back(entry.path());
        }
    }
    if (ec) {
        throw IoError("cannot list " + video_dir + ": " + ec.message());
    }
    if (paths.empty()) {
        throw IoError("no .cvid videos in " + video_dir);
    }
    std::sort(paths.begin(), paths.end());
    std::vector<Video> videos;
    for (const auto& p : paths) {
        videos.push_back(read_video(p));
        rep.videos.push_back(p.filename().string());
    }
    const int n = cfg.chunk_len;
    const int offset = cfg.eval_offset;
    for (size_t i = 0; i < videos.size(); ++i) {
        const auto curve = frame_differencing(videos[i]);
        if (rep.mean_fd_curve.empty()) {
            rep.mean_fd_curve.assign(curve.size(), 0.0);
        }
        require(curve.size() == rep.mean_fd_curve.size(), "eval: videos differ in length");
        for (size_t f = 0; f < curve.size(); ++f) {
            rep.mean_fd_curve[f] += curve[f] / static_cast<double>(videos.size());
        }
        rep.delta_edge_fd.push_back(delta_edge_fd(curve, n, offset, cfg.eval_per_chunk));
    }
    double mean_edge = 0.0;
    for (double v : rep.delta_edge_fd) {
        mean_edge += v / static_cast<double>(rep.delta_edge_fd.size());
    }
    double fd_mean = 0.0;
    for (double v : rep.mean_fd_curve) {
        fd_mean += v / static_cast<double>(rep.mean_fd_curve.size());
    }
    rep.records.push_back({"fd_mean", 0, fd_mean});
    rep.records.push_back({"delta_edge_fd", 0, mean_edge});
    if (videos.size() >= 2) {
        rep.step_fvd = step_fvd(videos, n, offset, cfg.seed);
        for (size_t i = 0; i < rep.step_fvd.size(); ++i) {
            rep.records.push_back({"step_fvd", static_cast<int>(i) + 2, rep.step_fvd[i]});
        }
    }

    const fs::path dir = cfg.out;
    write_resolved_config(dir, cfg);
    std::ofstream report(dir / "report.tsv", std::ios::trunc);
    std::ofstream curve(dir / "fd_curve.tsv", std::ios::trunc);
    std::ofstream per_video(dir / "per_video.tsv", std::ios::trunc);
    if (!report || !curve || !per_video) {
        throw IoError("cannot write evaluation outputs into " + dir.string());
    }
    write_metric_report(report, rep.records);
    write_fd_table(curve, rep.mean_fd_curve);
    per_video << "video\tdelta_edge_fd\n";
    for (size_t i = 0; i < rep.videos.size(); ++i) {
        per_video << rep.videos[i] << '\t' << rep.delta_edge_fd[i] << '\n';
    }
    return rep;
}

BenchReport cmd_bench(const RunConfig& cfg) {
    CausalVideoTransformer model = cfg.checkpoint.empty() ? CausalVideoTransformer(cfg.model) : load_model(cfg.checkpoint);
    if (cfg.checkpoint.empty()) {
        model.init_parameters(cfg.seed, InitMode::kRandomAll);
    }
    BenchConfig bc;
    bc.num_chunks = cfg.bench_chunks;
    bc.chunk_len = cfg.chunk_len;
    bc.prefix_frames = cfg.bench_prefix;
    bc.cfg_scale = cfg.cfg_scale;
    bc.seed = cfg.seed;
    const Schedule s = make_schedule(cfg.diffusion_steps, cfg.beta1, cfg.betaT, cfg.bench_ddim_steps);
    BenchReport rep = bench_cache(model, s, bc);

    const fs::path dir = cfg.out;
    write_resolved_config(dir, cfg);
    std::ofstream out(dir / "bench.tsv", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write bench report into " + dir.string());
    }
    out << "chunk\tk\tn\tcached_ms\tuncached_ms\tcached_score_rows\tuncached_score_rows\tformula_cached\t"
           "formula_uncached\tmax_abs_diff\n";
    for (size_t i = 0; i < rep.chunks.size(); ++i) {
        const auto& c = rep.chunks[i];
        out << i + 1 << '\t' << c.k << '\t' << c.n << '\t' << c.cached_ms << '\t' << c.uncached_ms << '\t'
            << c.cached_score_rows << '\t' << c.uncached_score_rows << '\t' << c.formula_cached << '\t'
            << c.formula_uncached << '\t' << c.max_abs_diff << '\n';
    }
    out << "total\t\t\t" << rep.cached_ms << '\t' << rep.uncached_ms << '\t' << rep.cached_score_rows << '\t'
        << rep.uncached_score_rows << '\t' << rep.formula_cached << '\t' << rep.formula_uncached << "\t\n";
    return rep;
}

namespace {

ModelConfig selftest_config(bool causal) {
    ModelConfig c;
    c.num_blocks = 2;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.patch_size = 2;
    c.height = 8;
    c.width = 8;
    c.channels = 3;
    c.max_frames = 9;
    c.caption_vocab_size = 32;
    c.caption_len = 3;
    c.prompt_enhance_len = 2;
    c.causal = causal;
    return c;
}

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = normal(rng);
    }
    return m;
}

SuiteResult suite_cache_oracle(std::uint64_t seed) {
    CausalVideoTransformer model(selftest_config(true));
    model.init_parameters(seed, InitMode::kRandomAll);
    const Schedule s = make_schedule(1000, 1e-4, 0.02, 5);
    std::mt19937_64 rng(seed);
    const Mat first = random_mat(1, model.config().frame_dim(), rng).cwiseMax(-1.0).cwiseMin(1.0);
    const Video first_video = mat_to_video(first, 8, 8, 3);
    InferenceConfig ic;
    ic.chunk_len = 2;
    ic.seed = seed;
    const Video a = generate(model, s, first_video, {1, 2, 3}, 3, ic);
    ic.use_cache = false;
    const Video b = generate(model, s, first_video, {1, 2, 3}, 3, ic);
    double diff = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        diff = std::max(diff, static_cast<double>(std::abs(a.data[i] - b.data[i])));
    }
    return {"cache_oracle", diff <= 1e-4, "max abs diff " + std::to_string(diff)};
}

SuiteResult suite_causality(std::uint64_t seed, bool causal) {
    CausalVideoTransformer model(selftest_config(causal));
    model.init_parameters(seed, InitMode::kRandomAll);
    std::mt19937_64 rng(seed + 1);
    const int N = 6;
    int violations = 0;
    int checks = 0;
    for (int trial = 0; trial < 10; ++trial) {
        ForwardInput in;
        in.z = random_mat(N, model.config().frame_dim(), rng);
        in.num_prompt = 1;
        in.timesteps = {0, 500, 500, 500, 500, 500};
        in.frame_ids = {0, 1, 2, 3, 4, 5};
        in.caption = {1, 2, 3};
        const NoisePrediction base = model.forward(in);
        for (int i = 0; i + 1 < N; ++i) {
            ForwardInput pert = in;
            pert.z.bottomRows(N - 1 - i) = random_mat(N - 1 - i, pert.z.cols(), rng);
            const NoisePrediction p = model.forward(pert);
            ++checks;
            if (p.eps.topRows(i + 1) != base.eps.topRows(i + 1) || p.v.topRows(i + 1) != base.v.topRows(i + 1)) {
                ++violations;
            }
        }
    }
    return {"causality", violations == 0,
            std::to_string(violations) + " of " + std::to_string(checks) + " prefixes changed"};
}

SuiteResult suite_duplication(std::uint64_t seed) {
    std::mt19937_64 rng(seed + 2);
    const int S = 16;
    const int D = 16;
    AttentionProjections proj;
    proj.heads = 2;
    proj.wq = random_mat(D, D, rng) * 0.3;
    proj.wk = random_mat(D, D, rng) * 0.3;
    proj.wv = random_mat(D, D, rng) * 0.3;
    proj.wo = random_mat(D, D, rng) * 0.3;
    proj.bq = random_mat(1, D, rng);
    proj.bk = random_mat(1, D, rng);
    proj.bv = random_mat(1, D, rng);
    proj.bo = random_mat(1, D, rng);
    const Mat x = random_mat(S, D, rng);
    const Mat q = (x * proj.wq).rowwise() + proj.bq;
    const Mat k = (x * proj.wk).rowwise() + proj.bk;
    const Mat v = (x * proj.wv).rowwise() + proj.bv;
    const Mat plain = (multihead_attention(q, k, v, proj.heads) * proj.wo).rowwise() + proj.bo;
    double worst = 0.0;
    for (int enh : {1, 2, 4}) {
        std::vector<Mat> bank;
        for (int i = 0; i < enh; ++i) {
            bank.push_back(random_mat(S, D, rng));
        }
        const Mat out = spatial_attention_enhanced(x, bank, enh, true, proj);
        worst = std::max(worst, (out - plain).cwiseAbs().maxCoeff());
    }
    return {"duplication_invariance", worst <= 1e-6, "max abs diff " + std::to_string(worst)};
}

}  // namespace

std::vector<SuiteResult> cmd_selftest(const RunConfig& cfg, bool corrupt_mask) {
    std::vector<SuiteResult> out;
    out.push_back(suite_cache_oracle(cfg.seed));
    out.push_back(suite_causality(cfg.seed, !corrupt_mask));
    out.push_back(suite_duplication(cfg.seed));
    return out;
}

namespace {

// Command-line flags that map onto config keys; applied after the config
// file and --set entries.
struct KeyFlags {
    std::vector<std::pair<CLI::Option*, std::string>> opts;
    std::vector<std::unique_ptr<std::string>> storage;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        storage.push_back(std::make_unique<std::string>());
        opts.emplace_back(app->add_option(flag, *storage.back(), help), key);
    }

    void apply(RunConfig& cfg) const {
        for (size_t i = 0; i < opts.size(); ++i) {
            if (opts[i].first->count() > 0) {
                cfg.set(opts[i].second, *storage[i]);
            }
        }
    }
};

struct Common {
    std::string config;
    std::vector<std::string> sets;
    KeyFlags flags;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Key = value config file");
    app->add_option("--set", c.sets, "Override a config key (key=value), repeatable");
    c.flags.add(app, "--seed", "seed", "Global seed");
    c.flags.add(app, "--out", "out", "Output directory");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) {
        for (const auto& [k, v] : read_key_value_file(c.config)) {
            cfg.set(k, v);
        }
    }
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.flags.apply(cfg);
    finalize(cfg);
    return cfg;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"causalvid: causal autoregressive video diffusion at desk scale"};
    app.require_subcommand(1);

    Common make_c, train_c, gen_c, eval_c, bench_c, self_c;

    auto* make = app.add_subcommand("make-data", "Synthesize the bouncing-shape corpus");
    add_common(make, make_c);
    make_c.flags.add(make, "--dir", "data_dir", "Dataset directory");
    make_c.flags.add(make, "--count", "data_count", "Number of clips");
    make_c.flags.add(make, "--frames", "data_frames", "Frames per clip");

    auto* trn = app.add_subcommand("train", "Frame-as-prompt training");
    add_common(trn, train_c);
    std::string resume;
    trn->add_option("--resume", resume, "Continue from a training checkpoint");
    train_c.flags.add(trn, "--data", "data_dir", "Dataset directory");
    train_c.flags.add(trn, "--steps", "total_steps", "Total optimizer steps");
    train_c.flags.add(trn, "--batch-size", "batch_size", "Clips per step");
    train_c.flags.add(trn, "--lr", "learning_rate", "AdamW learning rate");
    train_c.flags.add(trn, "--chunk-len", "chunk_len", "Chunk length n");
    train_c.flags.add(trn, "--seq-len", "seq_len", "Training sequence length N");

    auto* gen = app.add_subcommand("generate", "Autoregressive generation from a first frame");
    add_common(gen, gen_c);
    GenerateRequest req;
    std::string caption_text;
    int data_index = -1;
    bool no_cache = false;
    gen->add_option("--first-frame", req.first_frame, "Video container whose frame 0 starts the video");
    gen->add_option("--from-data", data_index, "Use frame 0 and caption of this dataset clip");
    gen->add_option("--caption", caption_text, "Comma-separated caption token ids");
    gen->add_flag("--no-cache", no_cache, "Recompute the clean prefix instead of using the kv-cache");
    gen->add_flag("--png", req.png, "Export every frame as PNG");
    gen->add_flag("--preview", req.preview, "Write a YUV4MPEG2 preview");
    gen_c.flags.add(gen, "--checkpoint", "checkpoint", "Model checkpoint");
    gen_c.flags.add(gen, "--data", "data_dir", "Dataset directory for --from-data");
    gen_c.flags.add(gen, "--num-chunks", "num_chunks", "Chunks to generate");
    gen_c.flags.add(gen, "--chunk-len", "chunk_len", "Frames per chunk");
    gen_c.flags.add(gen, "--cfg-scale", "cfg_scale", "Classifier-free guidance scale");
    gen_c.flags.add(gen, "--ddim-steps", "ddim_steps", "DDIM sub-schedule length");

    auto* ev = app.add_subcommand("eval", "FD curve, delta edge FD and Step-FVD of a video directory");
    add_common(ev, eval_c);
    std::string video_dir;
    ev->add_option("--videos", video_dir, "Directory of .cvid videos")->required();
    eval_c.flags.add(ev, "--chunk-len", "chunk_len", "Frames per chunk");
    eval_c.flags.add(ev, "--offset", "eval_offset", "Conditioning frames before the first chunk");
    bool per_chunk = false;
    ev->add_flag("--per-chunk", per_chunk, "Average per-chunk means for the non-junction FD");

    auto* bench = app.add_subcommand("bench", "kv-cache versus full-prefix recomputation benchmark");
    add_common(bench, bench_c);
    bench_c.flags.add(bench, "--checkpoint", "checkpoint", "Model checkpoint (random model when absent)");
    bench_c.flags.add(bench, "--num-chunks", "bench_chunks", "Timed chunks");
    bench_c.flags.add(bench, "--prefix", "bench_prefix", "Clean frames resident before timing");
    bench_c.flags.add(bench, "--chunk-len", "chunk_len", "Frames per chunk");
    bench_c.flags.add(bench, "--ddim-steps", "bench_ddim_steps", "DDIM steps per chunk");

    auto* self = app.add_subcommand("selftest", "Oracle, causality and duplication suites on a random model");
    add_common(self, self_c);
    bool corrupt = false;
    self->add_flag("--corrupt-mask", corrupt, "Negative control: bidirectional temporal attention");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (make->parsed()) {
            const RunConfig cfg = resolve(make_c);
            const auto records = cmd_make_data(cfg);
            std::cout << "wrote " << records.size() << " clips to " << cfg.data_dir << '\n';
        } else if (trn->parsed()) {
            const RunConfig cfg = resolve(train_c);
            const TrainRun run = cmd_train(cfg, resume);
            std::cout << "trained to step " << run.final_step << "; checkpoint " << (fs::path(cfg.out) / "final.cvck").string()
                      << '\n';
        } else if (gen->parsed()) {
            RunConfig cfg = resolve(gen_c);
            if (no_cache) {
                cfg.use_cache = false;
            }
            if (data_index >= 0) {
                req.data_index = data_index;
            }
            if (!caption_text.empty()) {
                req.caption = parse_caption(caption_text);
            }
            const Video v = cmd_generate(cfg, req);
            std::cout << "wrote " << v.frames << " frames to " << (fs::path(cfg.out) / "generated.cvid").string() << '\n';
        } else if (ev->parsed()) {
            RunConfig cfg = resolve(eval_c);
            if (per_chunk) {
                cfg.eval_per_chunk = true;
            }
            const EvalReport rep = cmd_eval(cfg, video_dir);
            write_metric_report(std::cout, rep.records);
        } else if (bench->parsed()) {
            const RunConfig cfg = resolve(bench_c);
            const BenchReport rep = cmd_bench(cfg);
            std::cout << "cached " << rep.cached_ms << " ms (" << rep.cached_fps << " frames/s), uncached "
                      << rep.uncached_ms << " ms (" << rep.uncached_fps << " frames/s), speedup " << rep.speedup()
                      << "x, score rows " << rep.cached_score_rows << " vs " << rep.uncached_score_rows << '\n';
        } else if (self->parsed()) {
            const RunConfig cfg = resolve(self_c);
            write_resolved_config(cfg.out, cfg);
            bool all = true;
            for (const auto& r : cmd_selftest(cfg, corrupt)) {
                std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
                all = all && r.passed;
            }
            return all ? kExitOk : kExitSelftest;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const ContractError& e) {
        std::cerr << "contract violation: " << e.what() << '\n';
        return kExitContract;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitOk;
}

}  // namespace causalvid::cli
