#pragma once

#include "causalvid/common.hpp"
#include "causalvid/kv_cache.hpp"
#include "causalvid/model_config.hpp"
#include "causalvid/parameters.hpp"
#include "causalvid/schedule.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace causalvid {

// Patch tokens of N frames: row f * S + s is spatial site s of frame f.
struct TokenGrid {
    Mat tokens;
    std::vector<std::int64_t> frame_ids;
    std::vector<int> timesteps;
};

struct ForwardInput {
    // N x (H*W*C) latents. The first num_prompt rows are clean prompt frames.
    Mat z;
    std::vector<int> timesteps;
    std::vector<std::int64_t> frame_ids;
    int num_prompt = 0;
    std::vector<int> caption;
};

// Per-layer activations of the processed frames, used to write the cache.
struct ForwardRecord {
    std::vector<Mat> temporal_keys;    // per layer: (N*S) x D
    std::vector<Mat> temporal_values;  // per layer: (N*S) x D
    std::vector<Mat> spatial_inputs;   // per layer: (N*S) x D
};

struct ForwardStats {
    // Query-row x key-row products formed by temporal attention, summed
    // over layers, spatial sites and heads.
    std::int64_t temporal_score_entries = 0;
};

// Key/value source for enhanced spatial attention: a frame of the current
// input or an entry of the cached prompt bank.
struct KeySource {
    bool from_cache = false;
    int index = 0;
};

struct BlockTape {
    Mat mod;  // N x 6D
    Eigen::VectorXd rstd1, rstd2, rstd3, rstd4;
    Mat xhat1, h1, qs, ks, vs, attn_s, out_s;
    std::vector<std::vector<KeySource>> sources;  // per frame
    std::vector<std::vector<Mat>> probs_s;       // per frame, per head
    Mat xhat2, h2, qt, kt, vt, attn_t, out_t;
    std::vector<std::vector<Mat>> probs_t;  // per site, per head
    Mat xhat3, qc, kc, vc, attn_c;
    std::vector<Mat> probs_c;
    Mat xhat4, h4, pre_act, act, out_m;
};

struct ForwardTape {
    int frames = 0;
    std::vector<int> caption;
    Mat patches;   // (N*S) x patch_dim
    Mat time_sin;  // N x D
    Mat time_pre;  // N x D, before the inner SiLU
    Mat temb;      // N x D
    Mat cap;       // caption_len x D
    std::vector<BlockTape> blocks;
    Mat mod_final;  // N x 2D
    Eigen::VectorXd rstd_final;
    Mat xhat_final, h_final;
};

struct ForwardOptions {
    const KVCache* cache = nullptr;
    ForwardRecord* record = nullptr;
    ForwardStats* stats = nullptr;
    // When set, intermediates for backward() are stored here.
    ForwardTape* tape = nullptr;
};

enum class InitMode {
    // Gates, cross-attention output and the output head start at zero so
    // every block is an identity map.
    kZeroGates,
    // Every parameter random; used by invariance and gradient tests.
    kRandomAll,
};

// Modulation vectors derived from a timestep embedding for one block.
struct AdaLNModulation {
    RowVec shift_attn, scale_attn, gate_attn, shift_mlp, scale_mlp, gate_mlp;
};

class CausalVideoTransformer {
public:
    explicit CausalVideoTransformer(ModelConfig cfg);
    ~CausalVideoTransformer();
    CausalVideoTransformer(const CausalVideoTransformer&);
    CausalVideoTransformer& operator=(const CausalVideoTransformer&);

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    size_t parameter_count() const { return params_.size(); }

    void init_parameters(std::uint64_t seed, InitMode mode = InitMode::kZeroGates);

    NoisePrediction forward(const ForwardInput& in, const ForwardOptions& opts = {}) const;

    // Accumulates dLoss/dparams into grads (same layout as parameters())
    // from the gradients of the two output heads.
    void backward(const ForwardTape& tape, const Mat& d_eps, const Mat& d_v, std::vector<double>& grads) const;

    // Patch embedding plus spatial and cyclic temporal positional tables.
    TokenGrid patchify(const Mat& z, const std::vector<std::int64_t>& frame_ids) const;
    // Inverse of patchify (least squares through the patch projection).
    Mat unpatchify(const TokenGrid& grid) const;

    // Sinusoidal step features passed through the timestep MLP.
    RowVec timestep_embedding(int t) const;
    AdaLNModulation adaln_modulate(const RowVec& timestep_embedding, int block) const;

    KVCache make_cache() const;

    const Mat& spatial_table() const { return spatial_pos_; }
    const Mat& temporal_table() const { return temporal_pos_; }

private:
    struct AttnIds {
        LinearIds q, k, v, o;
    };
    struct BlockIds {
        LinearIds ada;
        AttnIds spatial, temporal, cross;
        LinearIds mlp1, mlp2;
    };

    void build_layout();

    ModelConfig cfg_;
    ParameterSet params_;
    LinearIds patch_;
    LinearIds time1_, time2_;
    size_t caption_table_ = 0;
    std::vector<BlockIds> blocks_;
    LinearIds final_ada_, final_out_;
    Mat spatial_pos_;   // S x D
    Mat temporal_pos_;  // L x D

    friend struct ModelInternals;
};

// (N*S) x patch_dim raw patches; row f * S + s.
Mat extract_patches(const Mat& z, const ModelConfig& cfg);
Mat fold_patches(const Mat& patches, const ModelConfig& cfg);

// Sinusoidal features of a scalar position (cos half, then sin half).
RowVec sinusoidal_embedding(double position, int dim);

// Number of parameters implied by a configuration.
size_t expected_parameter_count(const ModelConfig& cfg);

}  // namespace causalvid
