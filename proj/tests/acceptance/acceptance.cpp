// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Artifacts (training logs, checkpoints, reports) go to
// --workdir.

#include "causalvid/attention.hpp"
#include "causalvid/checkpoint.hpp"
#include "causalvid/data.hpp"
#include "causalvid/inference.hpp"
#include "causalvid/kv_cache.hpp"
#include "causalvid/metrics.hpp"
#include "causalvid/model.hpp"
#include "causalvid/schedule.hpp"
#include "causalvid/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

using namespace causalvid;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 3) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

Mat normal_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

Mat uniform_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    return m;
}

double max_abs_diff(const Video& a, const Video& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        d = std::max(d, static_cast<double>(std::abs(a.data[i] - b.data[i])));
    }
    return d;
}

// ---------------------------------------------------------------------------
// 1. kv-cache oracle equivalence

Outcome kv_cache_oracle() {
    ModelConfig mc;  // 4 blocks, 16x16x3 latents, L = 49
    CausalVideoTransformer model(mc);
    model.init_parameters(11, InitMode::kRandomAll);
    const Schedule s = make_schedule(1000, 1e-4, 0.02, 100);
    std::mt19937_64 rng(11);
    const Video first = mat_to_video(uniform_mat(1, mc.frame_dim(), rng), mc.height, mc.width, mc.channels);
    InferenceConfig ic;
    ic.chunk_len = 8;
    ic.seed = 11;
    const auto t0 = Clock::now();
    const Video cached = generate(model, s, first, {1, 4, 12}, 6, ic);
    const double cached_s = seconds_since(t0);
    ic.use_cache = false;
    const auto t1 = Clock::now();
    const Video full = generate(model, s, first, {1, 4, 12}, 6, ic);
    const double full_s = seconds_since(t1);
    double worst = 0.0;
    for (int f = 0; f < cached.frames; ++f) {
        const auto a = cached.frame(f);
        const auto b = full.frame(f);
        for (size_t i = 0; i < a.size(); ++i) {
            worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
        }
    }
    const double total = cached_s + full_s;
    const bool ok = cached.frames == 49 && worst <= 1e-4 && total < 120.0;
    return {ok, "frames " + std::to_string(cached.frames) + ", max abs diff " + fmt(worst) + " (<= 1e-4), runtime " +
                    fmt(total) + " s (< 120 s; cached " + fmt(cached_s) + " s, recompute " + fmt(full_s) + " s)"};
}

// ---------------------------------------------------------------------------
// 2. causality suite

ModelConfig small_config(bool causal) {
    ModelConfig c;
    c.num_blocks = 2;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.patch_size = 4;
    c.height = 16;
    c.width = 16;
    c.channels = 3;
    c.max_frames = 12;
    c.causal = causal;
    return c;
}

// Returns the number of trials whose prefix outputs changed.
int causality_violations(const CausalVideoTransformer& model, int trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int N = 8;
    int violations = 0;
    for (int trial = 0; trial < trials; ++trial) {
        ForwardInput in;
        in.z = uniform_mat(N, model.config().frame_dim(), rng);
        in.num_prompt = 1 + static_cast<int>(rng() % 3);
        const int t = 1 + static_cast<int>(rng() % 1000);
        for (int f = 0; f < N; ++f) {
            in.timesteps.push_back(f < in.num_prompt ? 0 : t);
            in.frame_ids.push_back(f);
        }
        in.caption = {static_cast<int>(rng() % 18), static_cast<int>(rng() % 18), static_cast<int>(rng() % 18)};
        const int i = static_cast<int>(rng() % (N - 1));
        const NoisePrediction base = model.forward(in);
        ForwardInput pert = in;
        pert.z.bottomRows(N - 1 - i) = uniform_mat(N - 1 - i, pert.z.cols(), rng);
        const NoisePrediction p = model.forward(pert);
        if (p.eps.topRows(i + 1) != base.eps.topRows(i + 1) || p.v.topRows(i + 1) != base.v.topRows(i + 1)) {
            ++violations;
        }
    }
    return violations;
}

Outcome causality_suite() {
    CausalVideoTransformer causal(small_config(true));
    causal.init_parameters(21, InitMode::kRandomAll);
    CausalVideoTransformer open(small_config(false));
    open.parameters().values() = causal.parameters().values();
    const int v = causality_violations(causal, 100, 22);
    const int neg = causality_violations(open, 100, 22);
    return {v == 0 && neg > 0, std::to_string(v) + "/100 causal trials changed a prefix output (exact); negative "
                                   "control without mask: " + std::to_string(neg) + "/100 changed (must be > 0)"};
}

// ---------------------------------------------------------------------------
// 3. cache compute reduction

Outcome compute_reduction() {
    ModelConfig mc;  // L = 49
    CausalVideoTransformer model(mc);
    model.init_parameters(31, InitMode::kRandomAll);
    const Schedule s = make_schedule(1000, 1e-4, 0.02, 10);
    BenchConfig bc;
    bc.num_chunks = 2;
    bc.chunk_len = 16;
    bc.prefix_frames = 48;
    bc.seed = 31;
    const BenchReport r = bench_cache(model, s, bc);
    std::int64_t sum_cached = 0, sum_full = 0;
    bool per_chunk = true;
    std::ostringstream ks;
    for (const auto& c : r.chunks) {
        const std::int64_t k = std::min(c.k, mc.max_frames);
        sum_cached += c.n * (k + c.n);
        sum_full += (k + c.n) * (k + c.n);
        per_chunk = per_chunk && c.cached_score_rows == c.formula_cached && c.uncached_score_rows == c.formula_uncached;
        ks << (ks.tellp() > 0 ? "," : "") << c.k;
    }
    const BenchChunk& first = r.chunks.front();
    const double first_speedup = first.uncached_ms / first.cached_ms;
    const bool counts = per_chunk && r.cached_score_rows == sum_cached && r.uncached_score_rows == sum_full;
    const bool ok = counts && first.k == 48 && first_speedup >= 1.5;
    return {ok, "score rows " + std::to_string(r.cached_score_rows) + " vs " + std::to_string(r.uncached_score_rows) +
                    " (closed forms " + std::to_string(sum_cached) + " vs " + std::to_string(sum_full) + ", k=" +
                    ks.str() + ", n=16); speedup at k=48 " + fmt(first_speedup) + "x (>= 1.5x), overall " +
                    fmt(r.speedup()) + "x"};
}

// ---------------------------------------------------------------------------
// 4. gradient check

Outcome gradient_check() {
    ModelConfig c;
    c.num_blocks = 1;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.patch_size = 2;
    c.height = 4;
    c.width = 4;
    c.channels = 3;
    c.max_frames = 8;
    c.caption_vocab_size = 18;
    c.mlp_ratio = 2;
    c.prompt_enhance_len = 2;
    CausalVideoTransformer model(c);
    model.init_parameters(41, InitMode::kRandomAll);
    std::mt19937_64 rng(41);
    const int N = 4;
    ForwardInput in;
    in.z = uniform_mat(N, c.frame_dim(), rng);
    in.num_prompt = 1;
    in.timesteps = {0, 300, 300, 300};
    in.frame_ids = {0, 1, 2, 3};
    in.caption = {1, 5, 11};
    const Mat w_eps = normal_mat(N, c.frame_dim(), rng);
    const Mat w_v = normal_mat(N, c.frame_dim(), rng);
    const auto loss = [&] {
        const NoisePrediction p = model.forward(in);
        return p.eps.cwiseProduct(w_eps).sum() + p.v.cwiseProduct(w_v).sum();
    };
    ForwardTape tape;
    model.forward(in, {.tape = &tape});
    std::vector<double> grads(model.parameter_count(), 0.0);
    model.backward(tape, w_eps, w_v, grads);

    auto& values = model.parameters().values();
    std::vector<size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), size_t{0});
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(200);
    const double h = 1e-5;
    int good = 0;
    double worst = 0.0;
    for (size_t i : coords) {
        const double keep = values[i];
        values[i] = keep + h;
        const double up = loss();
        values[i] = keep - h;
        const double down = loss();
        values[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double rel = std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-7});
        good += rel < 1e-3 ? 1 : 0;
        worst = std::max(worst, rel);
    }
    const double frac = good / 200.0;
    return {frac >= 0.95, std::to_string(good) + "/200 sampled coordinates with relative error < 1e-3 (" +
                              fmt(100.0 * frac) + "%, need >= 95%); worst " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// 5 and 10. training smoke test and the junction-consistency report

struct SmokeSetup {
    ModelConfig model;
    TrainConfig train;
    int data_count = 200;
    int data_frames = 64;
    int eval_batch = 32;
    // generation for the junction report
    int videos = 16;
    int num_chunks = 6;
    int ddim_steps = 50;
};

SmokeSetup smoke_setup() {
    SmokeSetup s;
    s.model.num_blocks = 2;
    s.model.hidden_dim = 64;
    s.model.num_heads = 4;
    s.model.patch_size = 4;
    s.model.height = 16;
    s.model.width = 16;
    s.model.channels = 3;
    s.model.max_frames = 25;
    s.model.caption_vocab_size = kCaptionVocabUsed;
    s.model.mlp_ratio = 4;
    s.model.prompt_enhance_len = 2;
    s.train.seq_len = 25;
    s.train.chunk_len = 4;
    s.train.batch_size = 8;
    s.train.total_steps = 2000;
    s.train.learning_rate = 1e-3;
    s.train.weight_decay = 0.0;
    s.train.checkpoint_interval = 500;
    s.train.seed = 5;
    return s;
}

double eval_simple_loss(const CausalVideoTransformer& model, const TrainBatch& batch, const Schedule& s) {
    return batch_loss_and_grad(model, batch, s, 0.0, nullptr).simple;
}

struct SmokeRun {
    CausalVideoTransformer model{ModelConfig{}};
    double loss0 = 0.0;
    double loss_final = 0.0;
    double seconds = 0.0;
    std::vector<double> eval_curve;  // eval loss every 250 steps
    std::vector<TrainLogEntry> log;
};

SmokeRun smoke_train(const SmokeSetup& setup, const Dataset& data, const Schedule& s, bool causal,
                     const fs::path& dir) {
    ModelConfig mc = setup.model;
    mc.causal = causal;
    SmokeRun run;
    run.model = CausalVideoTransformer(mc);
    run.model.init_parameters(setup.train.seed);
    TrainConfig eval_cfg = setup.train;
    eval_cfg.batch_size = setup.eval_batch;
    eval_cfg.seed = setup.train.seed + 1000;
    eval_cfg.caption_dropout_p = 0.0;
    const TrainBatch eval_batch = make_batch(data, eval_cfg, s, 0);
    run.loss0 = eval_simple_loss(run.model, eval_batch, s);
    run.eval_curve.push_back(run.loss0);

    const auto t0 = Clock::now();
    const TrainRun tr = train(run.model, data, setup.train, s, {dir, {}}, [&](const TrainLogEntry& e) {
        if ((e.step + 1) % 250 == 0) {
            run.eval_curve.push_back(eval_simple_loss(run.model, eval_batch, s));
        }
    });
    run.seconds = seconds_since(t0);
    run.loss_final = run.eval_curve.back();
    run.log = tr.log;
    return run;
}

struct SmokeResults {
    SmokeSetup setup;
    Dataset data;
    Schedule schedule;
    SmokeRun causal;
    SmokeRun ablated;
    bool deterministic = false;
};

SmokeResults run_smoke(const fs::path& workdir) {
    SmokeResults r;
    r.setup = smoke_setup();
    DatasetSpec ds;
    ds.count = r.setup.data_count;
    ds.frames = r.setup.data_frames;
    ds.seed = 3;
    make_dataset(workdir / "data", ds);
    r.data = load_dataset(workdir / "data", r.setup.train.seq_len, r.setup.train.frame_interval);
    r.schedule = make_schedule(1000, 1e-4, 0.02, r.setup.ddim_steps);
    r.causal = smoke_train(r.setup, r.data, r.schedule, true, workdir / "train_causal");

    // Two short runs from the same seed must reproduce the main run's
    // opening trajectory bit for bit.
    SmokeSetup shortrun = r.setup;
    shortrun.train.total_steps = 20;
    shortrun.train.checkpoint_interval = 1000;
    CausalVideoTransformer a(shortrun.model), b(shortrun.model);
    a.init_parameters(shortrun.train.seed);
    b.init_parameters(shortrun.train.seed);
    const TrainRun ra = train(a, r.data, shortrun.train, r.schedule);
    const TrainRun rb = train(b, r.data, shortrun.train, r.schedule);
    bool same = a.parameters().values() == b.parameters().values();
    for (size_t i = 0; i < ra.log.size(); ++i) {
        same = same && ra.log[i].loss_simple == rb.log[i].loss_simple &&
               ra.log[i].loss_simple == r.causal.log[i].loss_simple;
    }
    r.deterministic = same;

    r.ablated = smoke_train(r.setup, r.data, r.schedule, false, workdir / "train_ablated");
    return r;
}

Outcome training_smoke(const SmokeResults& r) {
    const double drop = 1.0 - r.causal.loss_final / r.causal.loss0;
    std::ostringstream curve;
    for (size_t i = 0; i < r.causal.eval_curve.size(); ++i) {
        curve << (i ? " " : "") << fmt(r.causal.eval_curve[i], 4);
    }
    const bool ok = drop >= 0.6 && r.deterministic && r.causal.seconds < 1800.0;
    return {ok, "held-out masked L_simple " + fmt(r.causal.loss0, 4) + " -> " + fmt(r.causal.loss_final, 4) + " (drop " +
                    fmt(100.0 * drop) + "%, need >= 60%) in " + std::to_string(r.setup.train.total_steps) +
                    " steps; " + (r.deterministic ? "seed-deterministic" : "NOT deterministic") + "; runtime " +
                    fmt(r.causal.seconds) + " s (< 1800 s); curve every 250 steps: " + curve.str()};
}

// ---------------------------------------------------------------------------
// 6. metric correctness

Outcome metric_correctness() {
    std::mt19937_64 rng(61);
    const FrechetStats s = frechet_stats(normal_mat(200, 16, rng));
    const double same = frechet_distance(s, s);
    FrechetStats a, b;
    a.mean = Vec::Constant(1, 0.0);
    a.cov = Mat::Constant(1, 1, 1.0);
    a.count = 2;
    b = a;
    b.mean(0) = 1.0;
    const double scalar = frechet_distance(a, b);

    // brightness ramp with a constant step: every FD entry equal
    Video ramp(25, 8, 8, 3);
    for (int f = 0; f < ramp.frames; ++f) {
        std::fill(ramp.frame(f).begin(), ramp.frame(f).end(), -0.9f + 0.0625f * static_cast<float>(f));
    }
    const double uniform_edge = delta_edge_fd(frame_differencing(ramp), 4, 1);

    const int n = 4, offset = 1, len = 24;
    const double base = 0.2, delta = 0.05;
    std::vector<double> curve(len, base);
    const auto junctions = junction_indices(len, n, offset);
    for (int j : junctions) {
        curve[static_cast<size_t>(j)] += delta;
    }
    // mean over junctions minus mean over the remaining pairs at index >= offset
    const double expected = (base + delta) - base;
    const double spiked = delta_edge_fd(curve, n, offset);
    const bool ok = same <= 1e-8 && std::abs(scalar - 1.0) <= 1e-12 && uniform_edge == 0.0 &&
                    std::abs(spiked - expected) <= 1e-10;
    return {ok, "FD(identical) " + fmt(same) + " (<= 1e-8); d=1 (0,1) vs (1,1) " + fmt(scalar, 12) +
                    "; delta edge FD on uniform-FD video " + fmt(uniform_edge) + " (exact 0); spiked curve " +
                    fmt(spiked, 12) + " vs closed form " + fmt(expected, 12) + " (<= 1e-10)"};
}

// ---------------------------------------------------------------------------
// 7. duplication invariance

Outcome duplication_invariance() {
    std::mt19937_64 rng(71);
    const int S = 16, D = 32;
    AttentionProjections proj;
    proj.heads = 4;
    proj.wq = normal_mat(D, D, rng, 0.3);
    proj.wk = normal_mat(D, D, rng, 0.3);
    proj.wv = normal_mat(D, D, rng, 0.3);
    proj.wo = normal_mat(D, D, rng, 0.3);
    proj.bq = normal_mat(1, D, rng);
    proj.bk = normal_mat(1, D, rng);
    proj.bv = normal_mat(1, D, rng);
    proj.bo = normal_mat(1, D, rng);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Mat x = normal_mat(S, D, rng);
        const Mat q = (x * proj.wq).rowwise() + proj.bq;
        const Mat k = (x * proj.wk).rowwise() + proj.bk;
        const Mat v = (x * proj.wv).rowwise() + proj.bv;
        const Mat plain = (multihead_attention(q, k, v, proj.heads) * proj.wo).rowwise() + proj.bo;
        for (int enh : {1, 2, 4}) {
            std::vector<Mat> bank;
            for (int i = 0; i < enh; ++i) {
                bank.push_back(normal_mat(S, D, rng));
            }
            worst = std::max(worst, (spatial_attention_enhanced(x, bank, enh, true, proj) - plain).cwiseAbs().maxCoeff());
        }
    }
    return {worst <= 1e-6, "max abs diff vs plain self-attention over P' in {1,2,4}, 20 trials: " + fmt(worst) +
                               " (<= 1e-6)"};
}

// ---------------------------------------------------------------------------
// 8. DDIM consistency

Outcome ddim_consistency() {
    std::mt19937_64 rng(81);
    double worst = 0.0;
    for (int steps : {10, 100, 1000}) {
        const Schedule s = make_schedule(1000, 1e-4, 0.02, steps);
        const Mat z0 = uniform_mat(4, 48, rng);
        const Mat eps = normal_mat(4, 48, rng);
        Mat z = q_sample(z0, s.T, eps, s);
        for (int i = static_cast<int>(s.ddim_steps.size()) - 1; i >= 0; --i) {
            const int t = s.ddim_steps[static_cast<size_t>(i)];
            const int t_prev = i > 0 ? s.ddim_steps[static_cast<size_t>(i - 1)] : 0;
            z = ddim_step(eps, z, t, t_prev, s);
        }
        worst = std::max(worst, (z - z0).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-4, "max abs reconstruction error over 10/100/1000-step sub-schedules " + fmt(worst) +
                               " (<= 1e-4)"};
}

// ---------------------------------------------------------------------------
// 9. ring-buffer safety

Outcome ring_buffer_safety() {
    std::mt19937_64 rng(91);
    int failures = 0;
    std::string first_failure;
    for (int c = 0; c < 10000; ++c) {
        const int L = 1 + static_cast<int>(rng() % 12);
        const int S = 1 + static_cast<int>(rng() % 3);
        KVCache cache(1, L, S, 2, 1 + static_cast<int>(rng() % 3));
        std::deque<std::int64_t> oracle;
        std::int64_t next = 0;
        const int ops = 1 + static_cast<int>(rng() % 10);
        bool ok = true;
        for (int op = 0; op < ops && ok; ++op) {
            const int n = 1 + static_cast<int>(rng() % L);
            Mat keys(static_cast<Eigen::Index>(n) * S, 2), bank(static_cast<Eigen::Index>(n) * S, 2);
            for (int f = 0; f < n; ++f) {
                keys.middleRows(static_cast<Eigen::Index>(f) * S, S).setConstant(static_cast<double>(next + f));
            }
            bank.setZero();
            cache.append({keys}, {-keys}, {bank}, n);
            for (int f = 0; f < n; ++f) {
                oracle.push_back(next + f);
                if (static_cast<int>(oracle.size()) > L) {
                    oracle.pop_front();
                }
            }
            next += n;
            const auto ids = cache.resident_ids();
            ok = cache.resident() <= L && ids == std::vector<std::int64_t>(oracle.begin(), oracle.end());
            std::set<int> slots;
            for (std::int64_t id : ids) {
                ok = ok && cache.keys(0, id)(0, 0) == static_cast<double>(id);
                slots.insert(cyclic_position(id, L));
            }
            ok = ok && slots.size() == ids.size();
        }
        if (!ok) {
            ++failures;
            if (first_failure.empty()) {
                first_failure = " (first failing case " + std::to_string(c) + ")";
            }
        }
    }
    return {failures == 0, std::to_string(10000 - failures) + "/10000 random append sequences kept <= L residents, "
                                                              "oldest-first eviction and content" + first_failure};
}

// ---------------------------------------------------------------------------
// 10. junction consistency after smoke training

struct JunctionStats {
    double mean_edge = 0.0;
    std::vector<double> per_video;
    std::vector<double> step_fvd;
    std::vector<double> mean_curve;
};

JunctionStats junction_stats(const std::vector<Video>& videos, int n) {
    JunctionStats js;
    for (const auto& v : videos) {
        const auto curve = frame_differencing(v);
        if (js.mean_curve.empty()) {
            js.mean_curve.assign(curve.size(), 0.0);
        }
        for (size_t i = 0; i < curve.size(); ++i) {
            js.mean_curve[i] += curve[i] / static_cast<double>(videos.size());
        }
        js.per_video.push_back(delta_edge_fd(curve, n, 1));
        js.mean_edge += js.per_video.back() / static_cast<double>(videos.size());
    }
    js.step_fvd = step_fvd(videos, n, 1, 0);
    return js;
}

std::vector<Video> generate_set(const SmokeResults& r, const CausalVideoTransformer& model, bool use_cache) {
    std::vector<Video> out;
    for (int i = 0; i < r.setup.videos; ++i) {
        InferenceConfig ic;
        ic.chunk_len = r.setup.train.chunk_len;
        ic.use_cache = use_cache;
        ic.seed = 100 + static_cast<std::uint64_t>(i);
        const Video first = slice_frames(r.data.videos[static_cast<size_t>(i)], 0, 1);
        out.push_back(generate(model, r.schedule, first, r.data.captions[static_cast<size_t>(i)], r.setup.num_chunks, ic));
    }
    return out;
}

Outcome junction_report(const SmokeResults& r, const fs::path& workdir) {
    const int n = r.setup.train.chunk_len;
    const std::vector<Video> causal = generate_set(r, r.causal.model, true);
    const std::vector<Video> ablated = generate_set(r, r.ablated.model, false);
    std::vector<Video> real;
    for (int i = 0; i < r.setup.videos; ++i) {
        real.push_back(slice_frames(r.data.videos[static_cast<size_t>(i)], 0, 1 + r.setup.num_chunks * n));
    }
    const JunctionStats jc = junction_stats(causal, n);
    const JunctionStats ja = junction_stats(ablated, n);
    const JunctionStats jr = junction_stats(real, n);

    std::vector<MetricRecord> recs;
    for (auto [name, js] : {std::pair{"causal", &jc}, std::pair{"ablated", &ja}, std::pair{"data", &jr}}) {
        recs.push_back({std::string(name) + ".delta_edge_fd", 0, js->mean_edge});
        for (size_t i = 0; i < js->step_fvd.size(); ++i) {
            recs.push_back({std::string(name) + ".step_fvd", static_cast<int>(i) + 2, js->step_fvd[i]});
        }
    }
    std::ofstream report(workdir / "junction_report.tsv");
    write_metric_report(report, recs);
    std::ofstream curves(workdir / "fd_curves.tsv");
    curves << "frame\tcausal\tablated\tdata\n";
    for (size_t i = 0; i < jc.mean_curve.size(); ++i) {
        curves << i + 1 << '\t' << jc.mean_curve[i] << '\t' << ja.mean_curve[i] << '\t' << jr.mean_curve[i] << '\n';
    }
    for (size_t i = 0; i < causal.size(); ++i) {
        write_video(workdir / ("causal_" + std::to_string(i) + ".cvid"), causal[i]);
        write_video(workdir / ("ablated_" + std::to_string(i) + ".cvid"), ablated[i]);
    }
    const bool ok = jc.mean_edge < ja.mean_edge;
    return {ok, "delta edge FD over " + std::to_string(causal.size()) + " videos of " +
                    std::to_string(r.setup.num_chunks) + " chunks: causal " + fmt(jc.mean_edge, 4) +
                    " vs ablated (no causal mask) " + fmt(ja.mean_edge, 4) + " (must be lower); data " +
                    fmt(jr.mean_edge, 4) + "; report in " + (workdir / "junction_report.tsv").string()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string workdir = "acceptance_work";
    std::vector<int> only;
    app.add_option("--workdir", workdir, "Directory for datasets, checkpoints and reports");
    app.add_option("--only", only, "Run only these criteria (development aid)");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(workdir);

    const auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    int failed = 0;
    const auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        if (!wanted(id)) {
            return;
        }
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " ["
                  << fmt(seconds_since(t0)) << " s]" << std::endl;
    };

    report(1, "kv-cache oracle equivalence", kv_cache_oracle);
    report(2, "causality suite", causality_suite);
    report(3, "cache compute reduction", compute_reduction);
    report(4, "gradient check", gradient_check);
    report(6, "metric correctness", metric_correctness);
    report(7, "duplication invariance", duplication_invariance);
    report(8, "DDIM consistency", ddim_consistency);
    report(9, "ring-buffer safety", ring_buffer_safety);

    if (wanted(5) || wanted(10)) {
        std::optional<SmokeResults> smoke;
        std::string error;
        try {
            smoke = run_smoke(workdir);
        } catch (const std::exception& e) {
            error = e.what();
        }
        const auto need = [&]() -> const SmokeResults& {
            if (!smoke) {
                throw std::runtime_error("smoke training failed: " + error);
            }
            return *smoke;
        };
        report(5, "training smoke test", [&] { return training_smoke(need()); });
        report(10, "junction consistency vs bidirectional ablation", [&] { return junction_report(need(), workdir); });
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
