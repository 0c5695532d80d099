#pragma once

#include "causalvid/kv_cache.hpp"
#include "causalvid/model.hpp"
#include "causalvid/schedule.hpp"
#include "causalvid/video.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace causalvid {

struct InferenceConfig {
    int chunk_len = 16;
    double cfg_scale = 7.5;
    // false recomputes the clean prefix (last min(k, L) frames) every step.
    bool use_cache = true;
    std::uint64_t seed = 0;
};

// Everything one autoregression stream owns.
struct GenerationState {
    Mat clean;  // k x frame_dim accumulated clean latents
    std::vector<int> caption;
    std::vector<int> null_caption;
    KVCache cache_cond;
    KVCache cache_uncond;
    std::mt19937_64 rng;
    int chunk_len = 16;
    bool use_cache = true;

    int k() const { return static_cast<int>(clean.rows()); }
};

// Seeds a stream with its first clean frame(s) and writes them to the caches.
GenerationState start_generation(const CausalVideoTransformer& model, const Mat& first_frames,
                                 const std::vector<int>& caption, const InferenceConfig& cfg);

// chunk_len x frame_dim standard normal draws from the stream's RNG.
Mat draw_chunk_noise(GenerationState& state, int frame_dim);

// DDIM over the schedule's sub-steps starting from `noise`, with two
// forward passes (caption, null caption) per step. Caches are read only.
Mat denoise_chunk(const GenerationState& state, const CausalVideoTransformer& model, const Schedule& schedule,
                  double cfg_scale, const Mat& noise, ForwardStats* stats = nullptr);
Mat denoise_chunk(GenerationState& state, const CausalVideoTransformer& model, const Schedule& schedule,
                  double cfg_scale);

// Extra t = 0 pass over the finished chunk that records every layer's
// temporal keys/values and spatial inputs, then appends them to the caches.
// Always extends state.clean.
void write_cache_from_clean(GenerationState& state, const CausalVideoTransformer& model, const Mat& z0_chunk);

// 1 + num_chunks * chunk_len frames starting from first_frame.
Video generate(const CausalVideoTransformer& model, const Schedule& schedule, const Video& first_frame,
               const std::vector<int>& caption, int num_chunks, const InferenceConfig& cfg);

struct BenchConfig {
    int num_chunks = 1;
    int chunk_len = 16;
    // Clean frames resident before the first timed chunk.
    int prefix_frames = 0;
    double cfg_scale = 7.5;
    std::uint64_t seed = 0;
};

struct BenchChunk {
    int k = 0;  // frames visible as prefix for this chunk
    int n = 0;
    double cached_ms = 0.0;
    double uncached_ms = 0.0;
    // Temporal score rows per (layer, site, head, forward pass) as counted
    // by the model, and the closed forms n(k+n) and (k+n)^2.
    std::int64_t cached_score_rows = 0;
    std::int64_t uncached_score_rows = 0;
    std::int64_t formula_cached = 0;
    std::int64_t formula_uncached = 0;
    double max_abs_diff = 0.0;
};

struct BenchReport {
    std::vector<BenchChunk> chunks;
    double cached_ms = 0.0;
    double uncached_ms = 0.0;
    std::int64_t cached_score_rows = 0;
    std::int64_t uncached_score_rows = 0;
    std::int64_t formula_cached = 0;
    std::int64_t formula_uncached = 0;
    double cached_fps = 0.0;
    double uncached_fps = 0.0;

    double speedup() const { return cached_ms > 0.0 ? uncached_ms / cached_ms : 0.0; }
    double score_ratio() const {
        return cached_score_rows > 0 ? static_cast<double>(uncached_score_rows) / cached_score_rows : 0.0;
    }
};

BenchReport bench_cache(const CausalVideoTransformer& model, const Schedule& schedule, const BenchConfig& cfg);

}  // namespace causalvid
