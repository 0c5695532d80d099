#include "causalvid/inference.hpp"

#include <algorithm>
#include <chrono>
#include <string>

namespace causalvid {

namespace {

std::vector<std::int64_t> id_range(std::int64_t first, int count) {
    std::vector<std::int64_t> ids(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        ids[static_cast<size_t>(i)] = first + i;
    }
    return ids;
}

void write_one(KVCache& cache, const CausalVideoTransformer& model, const Mat& z0, std::int64_t first_id,
               const std::vector<int>& caption) {
    const int m = static_cast<int>(z0.rows());
    ForwardInput in;
    in.z = z0;
    in.timesteps.assign(static_cast<size_t>(m), 0);
    in.frame_ids = id_range(first_id, m);
    in.num_prompt = m;
    in.caption = caption;
    ForwardRecord record;
    ForwardOptions opts;
    opts.cache = &cache;
    opts.record = &record;
    model.forward(in, opts);
    cache.append(record.temporal_keys, record.temporal_values, record.spatial_inputs, m);
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

GenerationState start_generation(const CausalVideoTransformer& model, const Mat& first_frames,
                                 const std::vector<int>& caption, const InferenceConfig& cfg) {
    const ModelConfig& mc = model.config();
    require_config(cfg.chunk_len >= 1, "chunk_len must be positive");
    require_config(cfg.chunk_len <= mc.max_frames, "chunk_len must not exceed the cache capacity max_frames");
    if (cfg.use_cache && !mc.causal) {
        throw ContractError("kv-cache generation requires a causal model; use full-prefix recomputation");
    }
    require(first_frames.rows() == 0 || first_frames.cols() == mc.frame_dim(),
            "start_generation: first frame size does not match the model");
    require(static_cast<int>(caption.size()) == mc.caption_len, "start_generation: caption length mismatch");
    GenerationState st;
    st.clean = Mat(0, mc.frame_dim());
    st.caption = caption;
    st.null_caption.assign(static_cast<size_t>(mc.caption_len), 0);
    st.rng.seed(cfg.seed);
    st.chunk_len = cfg.chunk_len;
    st.use_cache = cfg.use_cache;
    if (cfg.use_cache) {
        st.cache_cond = model.make_cache();
        st.cache_uncond = model.make_cache();
    }
    if (first_frames.rows() > 0) {
        write_cache_from_clean(st, model, first_frames);
    }
    return st;
}

Mat draw_chunk_noise(GenerationState& state, int frame_dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat noise(state.chunk_len, frame_dim);
    for (Eigen::Index i = 0; i < noise.size(); ++i) {
        noise.data()[i] = normal(state.rng);
    }
    return noise;
}

Mat denoise_chunk(const GenerationState& state, const CausalVideoTransformer& model, const Schedule& schedule,
                  double cfg_scale, const Mat& noise, ForwardStats* stats) {
    const ModelConfig& mc = model.config();
    require(noise.cols() == mc.frame_dim() && noise.rows() >= 1, "denoise_chunk: noise shape mismatch");
    const int n = static_cast<int>(noise.rows());
    const int k = state.k();
    const int prefix = state.use_cache ? 0 : std::min(k, mc.max_frames);
    const bool same_branches = state.caption == state.null_caption;

    ForwardInput cond;
    cond.z = Mat(prefix + n, mc.frame_dim());
    if (prefix > 0) {
        cond.z.topRows(prefix) = state.clean.bottomRows(prefix);
    }
    cond.frame_ids = id_range(k - prefix, prefix + n);
    cond.timesteps.assign(static_cast<size_t>(prefix + n), 0);
    cond.num_prompt = prefix;
    cond.caption = state.caption;
    ForwardInput uncond = cond;
    uncond.caption = state.null_caption;

    ForwardOptions opts_c, opts_u;
    opts_c.stats = stats;
    opts_u.stats = stats;
    if (state.use_cache) {
        opts_c.cache = &state.cache_cond;
        opts_u.cache = &state.cache_uncond;
    }

    Mat z = noise;
    const auto& steps = schedule.ddim_steps;
    for (int i = static_cast<int>(steps.size()) - 1; i >= 0; --i) {
        const int t = steps[static_cast<size_t>(i)];
        const int t_prev = i > 0 ? steps[static_cast<size_t>(i - 1)] : 0;
        std::fill(cond.timesteps.begin() + prefix, cond.timesteps.end(), t);
        cond.z.bottomRows(n) = z;
        const Mat eps_c = model.forward(cond, opts_c).eps.bottomRows(n);
        Mat eps = eps_c;
        if (!same_branches) {
            uncond.timesteps = cond.timesteps;
            uncond.z.bottomRows(n) = z;
            const Mat eps_u = model.forward(uncond, opts_u).eps.bottomRows(n);
            eps = cfg_combine(eps_c, eps_u, cfg_scale);
        }
        z = ddim_step(eps, z, t, t_prev, schedule);
        if (!z.allFinite()) {
            throw NumericError("non-finite latents at DDIM step index " + std::to_string(i) + " (t=" +
                               std::to_string(t) + ")");
        }
    }
    return z.cwiseMax(-1.0).cwiseMin(1.0);
}

Mat denoise_chunk(GenerationState& state, const CausalVideoTransformer& model, const Schedule& schedule,
                  double cfg_scale) {
    const Mat noise = draw_chunk_noise(state, model.config().frame_dim());
    return denoise_chunk(static_cast<const GenerationState&>(state), model, schedule, cfg_scale, noise);
}

void write_cache_from_clean(GenerationState& state, const CausalVideoTransformer& model, const Mat& z0_chunk) {
    require(z0_chunk.cols() == model.config().frame_dim(), "write_cache_from_clean: frame size mismatch");
    if (state.use_cache) {
        const int cap = state.cache_cond.capacity();
        for (Eigen::Index r = 0; r < z0_chunk.rows(); r += cap) {
            const Eigen::Index m = std::min<Eigen::Index>(cap, z0_chunk.rows() - r);
            const Mat piece = z0_chunk.middleRows(r, m);
            const std::int64_t first = state.k() + r;
            write_one(state.cache_cond, model, piece, first, state.caption);
            write_one(state.cache_uncond, model, piece, first, state.null_caption);
        }
    }
    Mat grown(state.clean.rows() + z0_chunk.rows(), z0_chunk.cols());
    grown << state.clean, z0_chunk;
    state.clean = std::move(grown);
}

Video generate(const CausalVideoTransformer& model, const Schedule& schedule, const Video& first_frame,
               const std::vector<int>& caption, int num_chunks, const InferenceConfig& cfg) {
    require_config(num_chunks >= 1, "num_chunks must be at least 1");
    const ModelConfig& mc = model.config();
    require(first_frame.frames >= 1 && first_frame.height == mc.height && first_frame.width == mc.width &&
                first_frame.channels == mc.channels,
            "generate: first frame does not match the model latent shape");
    GenerationState st = start_generation(model, frames_to_mat(first_frame), caption, cfg);
    for (int c = 0; c < num_chunks; ++c) {
        const Mat chunk = denoise_chunk(st, model, schedule, cfg.cfg_scale);
        write_cache_from_clean(st, model, chunk);
    }
    return mat_to_video(st.clean, mc.height, mc.width, mc.channels);
}

BenchReport bench_cache(const CausalVideoTransformer& model, const Schedule& schedule, const BenchConfig& cfg) {
    const ModelConfig& mc = model.config();
    require_config(cfg.num_chunks >= 1, "bench num_chunks must be at least 1");
    require_config(cfg.prefix_frames >= 0, "bench prefix_frames must be non-negative");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    Mat prefix(cfg.prefix_frames, mc.frame_dim());
    for (Eigen::Index i = 0; i < prefix.size(); ++i) {
        prefix.data()[i] = uniform(rng);
    }
    std::vector<int> caption(static_cast<size_t>(mc.caption_len), 1);

    InferenceConfig ic;
    ic.chunk_len = cfg.chunk_len;
    ic.cfg_scale = cfg.cfg_scale;
    ic.seed = cfg.seed;
    ic.use_cache = true;
    GenerationState cached = start_generation(model, prefix, caption, ic);
    ic.use_cache = false;
    GenerationState uncached = start_generation(model, prefix, caption, ic);

    const std::int64_t per_forward =
        static_cast<std::int64_t>(mc.num_blocks) * mc.tokens_per_frame() * mc.num_heads;
    const auto forwards = static_cast<std::int64_t>(schedule.ddim_steps.size()) * 2;
    BenchReport report;
    for (int c = 0; c < cfg.num_chunks; ++c) {
        const Mat noise = draw_chunk_noise(cached, mc.frame_dim());
        BenchChunk bc;
        bc.n = cfg.chunk_len;
        bc.k = std::min(cached.k(), mc.max_frames);

        ForwardStats sc;
        auto t0 = std::chrono::steady_clock::now();
        const Mat out_c = denoise_chunk(cached, model, schedule, cfg.cfg_scale, noise, &sc);
        write_cache_from_clean(cached, model, out_c);
        bc.cached_ms = elapsed_ms(t0);

        ForwardStats su;
        t0 = std::chrono::steady_clock::now();
        const Mat out_u = denoise_chunk(uncached, model, schedule, cfg.cfg_scale, noise, &su);
        bc.uncached_ms = elapsed_ms(t0);
        write_cache_from_clean(uncached, model, out_c);

        bc.cached_score_rows = sc.temporal_score_entries / (per_forward * forwards);
        bc.uncached_score_rows = su.temporal_score_entries / (per_forward * forwards);
        bc.formula_cached = static_cast<std::int64_t>(bc.n) * (bc.k + bc.n);
        bc.formula_uncached = static_cast<std::int64_t>(bc.k + bc.n) * (bc.k + bc.n);
        bc.max_abs_diff = (out_c - out_u).cwiseAbs().maxCoeff();

        report.cached_ms += bc.cached_ms;
        report.uncached_ms += bc.uncached_ms;
        report.cached_score_rows += bc.cached_score_rows;
        report.uncached_score_rows += bc.uncached_score_rows;
        report.formula_cached += bc.formula_cached;
        report.formula_uncached += bc.formula_uncached;
        report.chunks.push_back(bc);
    }
    const double frames = static_cast<double>(cfg.num_chunks) * cfg.chunk_len;
    report.cached_fps = report.cached_ms > 0.0 ? 1000.0 * frames / report.cached_ms : 0.0;
    report.uncached_fps = report.uncached_ms > 0.0 ? 1000.0 * frames / report.uncached_ms : 0.0;
    return report;
}

}  // namespace causalvid
