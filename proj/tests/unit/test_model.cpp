#include "causalvid/inference.hpp"
#include "causalvid/model.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace causalvid;
using testutil::randn;
using testutil::tiny_config;
using testutil::uniform;

namespace {

std::vector<std::int64_t> iota_ids(int n, std::int64_t first = 0) {
    std::vector<std::int64_t> ids(static_cast<size_t>(n));
    std::iota(ids.begin(), ids.end(), first);
    return ids;
}

ForwardInput random_input(const ModelConfig& cfg, int N, int num_prompt, std::mt19937_64& rng) {
    ForwardInput in;
    in.z = uniform(N, cfg.frame_dim(), rng);
    std::uniform_int_distribution<int> t_dist(1, 1000);
    const int t = t_dist(rng);
    for (int f = 0; f < N; ++f) {
        in.timesteps.push_back(f < num_prompt ? 0 : t);
    }
    in.frame_ids = iota_ids(N);
    in.num_prompt = num_prompt;
    in.caption = {1, 4, 12};
    return in;
}

CausalVideoTransformer random_model(ModelConfig cfg, std::uint64_t seed) {
    CausalVideoTransformer m(cfg);
    m.init_parameters(seed, InitMode::kRandomAll);
    return m;
}

}  // namespace

TEST(ModelLayout, ParameterCountMatchesHandCount) {
    // d=16, patch_dim=12, mlp=32, vocab=20, two blocks
    const size_t patch = 12 * 16 + 16;
    const size_t time = 2 * (16 * 16 + 16);
    const size_t caption = 20 * 16;
    const size_t block = (16 * 96 + 96) + 12 * (16 * 16 + 16) + (16 * 32 + 32) + (32 * 16 + 16);
    const size_t head = (16 * 32 + 32) + (16 * 24 + 24);
    const size_t expected = patch + time + caption + 2 * block + head;
    EXPECT_EQ(expected, 13960u);
    CausalVideoTransformer m(tiny_config());
    EXPECT_EQ(m.parameter_count(), expected);
    EXPECT_EQ(expected_parameter_count(tiny_config()), expected);
}

TEST(ModelLayout, TokensPerFrame) {
    ModelConfig c = tiny_config();
    c.patch_size = 4;
    EXPECT_EQ(c.tokens_per_frame(), 4);
}

TEST(ModelLayout, InvalidConfigRejected) {
    ModelConfig c = tiny_config();
    c.num_heads = 3;
    EXPECT_THROW(CausalVideoTransformer{c}, ConfigError);
    c = tiny_config();
    c.patch_size = 3;
    EXPECT_THROW(CausalVideoTransformer{c}, ConfigError);
}

TEST(CyclicPosition, Cases) {
    EXPECT_EQ(cyclic_position(0, 49), 0);
    EXPECT_EQ(cyclic_position(49, 49), 0);
    EXPECT_EQ(cyclic_position(52, 49), 3);
    EXPECT_THROW(cyclic_position(-1, 49), ContractError);
}

TEST(Patches, LayoutIsRowMajorWithinPatch) {
    const ModelConfig c = tiny_config();
    Mat z(1, c.frame_dim());
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
        z(0, i) = static_cast<double>(i);
    }
    const Mat p = extract_patches(z, c);
    ASSERT_EQ(p.rows(), c.tokens_per_frame());
    ASSERT_EQ(p.cols(), c.patch_dim());
    // patch (gy=1, gx=2) is row 1*4+2; element (dy=1, dx=0, ch=2)
    const int y = 3, x = 4, ch = 2;
    EXPECT_EQ(p(1 * 4 + 2, (1 * 2 + 0) * 3 + ch), z(0, (y * c.width + x) * c.channels + ch));
}

TEST(Patches, FoldInvertsExtract) {
    std::mt19937_64 rng(5);
    const ModelConfig c = tiny_config();
    const Mat z = uniform(3, c.frame_dim(), rng);
    EXPECT_EQ(fold_patches(extract_patches(z, c), c), z);
}

TEST(Patchify, RoundTripWithIdentityProjection) {
    const ModelConfig c = tiny_config();
    CausalVideoTransformer m(c);
    auto& ps = m.parameters();
    auto w = ps.view(ps.index_of("patch.w"));
    w.setZero();
    for (int i = 0; i < c.patch_dim(); ++i) {
        w(i, i) = 1.0;
    }
    std::mt19937_64 rng(6);
    const Mat z = uniform(2, c.frame_dim(), rng);
    const TokenGrid g = m.patchify(z, {0, 7});
    EXPECT_EQ(g.tokens.rows(), 2 * c.tokens_per_frame());
    EXPECT_LE((m.unpatchify(g) - z).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Patchify, RoundTripWithRandomProjection) {
    CausalVideoTransformer m = random_model(tiny_config(), 7);
    std::mt19937_64 rng(7);
    const Mat z = uniform(3, m.config().frame_dim(), rng);
    EXPECT_LE((m.unpatchify(m.patchify(z, {4, 5, 6})) - z).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Patchify, FrameIdsSeparateEqualContent) {
    CausalVideoTransformer m = random_model(tiny_config(), 8);
    std::mt19937_64 rng(8);
    const Mat one = uniform(1, m.config().frame_dim(), rng);
    Mat z(2, one.cols());
    z << one, one;
    const TokenGrid g = m.patchify(z, {0, 1});
    const int s = m.config().tokens_per_frame();
    const Mat diff = g.tokens.middleRows(0, s) - g.tokens.middleRows(s, s);
    const RowVec pos = m.temporal_table().row(0) - m.temporal_table().row(1);
    EXPECT_GT(diff.cwiseAbs().maxCoeff(), 1e-3);
    for (int r = 0; r < s; ++r) {
        EXPECT_LE((diff.row(r) - pos).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Patchify, IdsWrapAtTableLength) {
    CausalVideoTransformer m = random_model(tiny_config(), 9);
    std::mt19937_64 rng(9);
    const Mat z = uniform(1, m.config().frame_dim(), rng);
    const int L = m.config().max_frames;
    EXPECT_EQ(m.patchify(z, {3}).tokens, m.patchify(z, {3 + L}).tokens);
}

TEST(Sinusoid, OriginAndRange) {
    const RowVec e0 = sinusoidal_embedding(0.0, 8);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(e0(i), 1.0);
        EXPECT_EQ(e0(4 + i), 0.0);
    }
    const RowVec e = sinusoidal_embedding(37.0, 8);
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(e(i) * e(i) + e(4 + i) * e(4 + i), 1.0, 1e-12);
    }
    EXPECT_NEAR(e(0), std::cos(37.0), 1e-12);
}

TEST(AdaLN, ZeroProjectionGivesZeroModulation) {
    CausalVideoTransformer m(tiny_config());
    m.init_parameters(1, InitMode::kZeroGates);
    const AdaLNModulation mod = m.adaln_modulate(m.timestep_embedding(500), 0);
    for (const RowVec* v : {&mod.shift_attn, &mod.scale_attn, &mod.gate_attn, &mod.shift_mlp, &mod.scale_mlp,
                            &mod.gate_mlp}) {
        EXPECT_EQ(v->cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(AdaLN, EqualTimestepsEqualModulation) {
    CausalVideoTransformer m = random_model(tiny_config(), 10);
    const AdaLNModulation a = m.adaln_modulate(m.timestep_embedding(321), 1);
    const AdaLNModulation b = m.adaln_modulate(m.timestep_embedding(321), 1);
    EXPECT_EQ(a.scale_attn, b.scale_attn);
    EXPECT_EQ(a.gate_mlp, b.gate_mlp);
}

TEST(AdaLN, PromptAndNoisyFramesDiffer) {
    CausalVideoTransformer m = random_model(tiny_config(), 11);
    const AdaLNModulation a = m.adaln_modulate(m.timestep_embedding(0), 0);
    const AdaLNModulation b = m.adaln_modulate(m.timestep_embedding(500), 0);
    EXPECT_GT((a.shift_attn - b.shift_attn).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Forward, ZeroGateInitIsIdentityThroughBlocks) {
    // Gates and the output head are zero, so both heads output exactly zero.
    CausalVideoTransformer m(tiny_config());
    m.init_parameters(2, InitMode::kZeroGates);
    std::mt19937_64 rng(12);
    const NoisePrediction p = m.forward(random_input(m.config(), 4, 1, rng));
    EXPECT_EQ(p.eps.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(p.v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, OutputShapes) {
    CausalVideoTransformer m = random_model(tiny_config(), 13);
    std::mt19937_64 rng(13);
    const NoisePrediction p = m.forward(random_input(m.config(), 5, 2, rng));
    EXPECT_EQ(p.eps.rows(), 5);
    EXPECT_EQ(p.eps.cols(), m.config().frame_dim());
    EXPECT_EQ(p.v.rows(), 5);
    EXPECT_EQ(p.v.cols(), m.config().frame_dim());
}

TEST(Forward, BitwiseDeterministic) {
    CausalVideoTransformer m = random_model(tiny_config(), 14);
    std::mt19937_64 rng(14);
    const ForwardInput in = random_input(m.config(), 5, 1, rng);
    const NoisePrediction a = m.forward(in);
    const NoisePrediction b = m.forward(in);
    EXPECT_EQ(a.eps, b.eps);
    EXPECT_EQ(a.v, b.v);
}

TEST(Forward, CopiedModelGivesSameOutput) {
    CausalVideoTransformer m = random_model(tiny_config(), 15);
    const CausalVideoTransformer copy = m;
    std::mt19937_64 rng(15);
    const ForwardInput in = random_input(m.config(), 3, 1, rng);
    EXPECT_EQ(m.forward(in).eps, copy.forward(in).eps);
}

TEST(Forward, InputValidation) {
    CausalVideoTransformer m = random_model(tiny_config(), 16);
    std::mt19937_64 rng(16);
    ForwardInput in = random_input(m.config(), 3, 1, rng);
    in.timesteps.pop_back();
    EXPECT_THROW(m.forward(in), ContractError);
    in = random_input(m.config(), 3, 1, rng);
    in.caption = {1, 2};
    EXPECT_THROW(m.forward(in), ContractError);
    in = random_input(m.config(), 3, 1, rng);
    in.caption = {1, 2, m.config().caption_vocab_size};
    EXPECT_THROW(m.forward(in), ContractError);
    in = random_input(m.config(), 3, 1, rng);
    in.timesteps[0] = 5;
    EXPECT_THROW(m.forward(in), ContractError);
}

TEST(Forward, SingleFrameWorks) {
    CausalVideoTransformer m = random_model(tiny_config(), 17);
    std::mt19937_64 rng(17);
    const NoisePrediction p = m.forward(random_input(m.config(), 1, 0, rng));
    EXPECT_TRUE(p.eps.allFinite());
}

TEST(Forward, ScoreEntriesCountFullSequence) {
    CausalVideoTransformer m = random_model(tiny_config(), 18);
    std::mt19937_64 rng(18);
    ForwardStats stats;
    const int N = 5;
    m.forward(random_input(m.config(), N, 1, rng), {.stats = &stats});
    const ModelConfig& c = m.config();
    EXPECT_EQ(stats.temporal_score_entries,
              static_cast<std::int64_t>(c.num_blocks) * c.tokens_per_frame() * c.num_heads * N * N);
}

// Property: randomising every frame after i leaves outputs at frames <= i
// bitwise unchanged.
TEST(Causality, FutureFramesNeverLeakIntoThePast) {
    CausalVideoTransformer m = random_model(tiny_config(), 19);
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 6;
        const int P = 1 + trial % 3;
        ForwardInput in = random_input(m.config(), N, P, rng);
        const NoisePrediction base = m.forward(in);
        const int i = static_cast<int>(rng() % N);
        ForwardInput changed = in;
        changed.z.bottomRows(N - 1 - i) = uniform(N - 1 - i, in.z.cols(), rng);
        const NoisePrediction out = m.forward(changed);
        EXPECT_EQ(out.eps.topRows(i + 1), base.eps.topRows(i + 1)) << "trial " << trial << " i=" << i;
        EXPECT_EQ(out.v.topRows(i + 1), base.v.topRows(i + 1));
    }
}

TEST(Causality, BidirectionalModelLeaks) {
    ModelConfig c = tiny_config();
    c.causal = false;
    CausalVideoTransformer m = random_model(c, 20);
    std::mt19937_64 rng(20);
    ForwardInput in = random_input(c, 5, 1, rng);
    const NoisePrediction base = m.forward(in);
    in.z.row(4) = uniform(1, in.z.cols(), rng);
    EXPECT_GT((m.forward(in).eps.row(0) - base.eps.row(0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CachedForward, MatchesFullRecomputeOnLastFrames) {
    const ModelConfig c = tiny_config();
    CausalVideoTransformer m = random_model(c, 21);
    std::mt19937_64 rng(21);
    for (int k : {1, 3, 7}) {
        const int n = 3;
        const Mat prefix = uniform(k, c.frame_dim(), rng);
        const std::vector<int> caption{2, 5, 11};
        InferenceConfig ic;
        ic.chunk_len = n;
        GenerationState st = start_generation(m, prefix, caption, ic);
        ASSERT_EQ(st.cache_cond.resident(), k);

        const Mat noisy = randn(n, c.frame_dim(), rng);
        ForwardInput chunk;
        chunk.z = noisy;
        chunk.timesteps.assign(static_cast<size_t>(n), 400);
        chunk.frame_ids = iota_ids(n, k);
        chunk.caption = caption;
        const NoisePrediction cached = m.forward(chunk, {.cache = &st.cache_cond});

        ForwardInput full;
        full.z.resize(k + n, c.frame_dim());
        full.z << prefix, noisy;
        full.timesteps.assign(static_cast<size_t>(k), 0);
        full.timesteps.resize(static_cast<size_t>(k + n), 400);
        full.frame_ids = iota_ids(k + n);
        full.num_prompt = k;
        full.caption = caption;
        const NoisePrediction ref = m.forward(full);
        EXPECT_LE((cached.eps - ref.eps.bottomRows(n)).cwiseAbs().maxCoeff(), 1e-5) << "k=" << k;
        EXPECT_LE((cached.v - ref.v.bottomRows(n)).cwiseAbs().maxCoeff(), 1e-5) << "k=" << k;
    }
}

TEST(CachedForward, ScoreEntriesCountChunkRowsOnly) {
    const ModelConfig c = tiny_config();
    CausalVideoTransformer m = random_model(c, 22);
    std::mt19937_64 rng(22);
    const int k = 4, n = 2;
    InferenceConfig ic;
    ic.chunk_len = n;
    GenerationState st = start_generation(m, uniform(k, c.frame_dim(), rng), {1, 1, 1}, ic);
    ForwardInput chunk;
    chunk.z = randn(n, c.frame_dim(), rng);
    chunk.timesteps.assign(static_cast<size_t>(n), 10);
    chunk.frame_ids = iota_ids(n, k);
    chunk.caption = {1, 1, 1};
    ForwardStats stats;
    m.forward(chunk, {.cache = &st.cache_cond, .stats = &stats});
    EXPECT_EQ(stats.temporal_score_entries,
              static_cast<std::int64_t>(c.num_blocks) * c.tokens_per_frame() * c.num_heads * n * (k + n));
}

TEST(Gradient, MatchesCentralDifferences) {
    ModelConfig c;
    c.num_blocks = 1;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.patch_size = 2;
    c.height = 4;
    c.width = 4;
    c.channels = 2;
    c.max_frames = 6;
    c.caption_vocab_size = 8;
    c.caption_len = 2;
    c.mlp_ratio = 2;
    c.prompt_enhance_len = 1;
    CausalVideoTransformer m = random_model(c, 23);
    std::mt19937_64 rng(23);
    ForwardInput in = random_input(c, 3, 1, rng);
    in.caption = {3, 5};
    const Mat w_eps = randn(3, c.frame_dim(), rng);
    const Mat w_v = randn(3, c.frame_dim(), rng);
    const auto loss = [&] {
        const NoisePrediction p = m.forward(in);
        return p.eps.cwiseProduct(w_eps).sum() + p.v.cwiseProduct(w_v).sum();
    };
    ForwardTape tape;
    m.forward(in, {.tape = &tape});
    std::vector<double> grads(m.parameter_count(), 0.0);
    m.backward(tape, w_eps, w_v, grads);

    auto& values = m.parameters().values();
    const double h = 1e-5;
    int good = 0, total = 0;
    for (size_t i = 0; i < values.size(); i += 7) {
        const double keep = values[i];
        values[i] = keep + h;
        const double up = loss();
        values[i] = keep - h;
        const double down = loss();
        values[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double rel = std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-7});
        good += rel < 1e-3 ? 1 : 0;
        ++total;
    }
    EXPECT_GE(static_cast<double>(good) / total, 0.95) << good << "/" << total;
}
