#include "causalvid/model.hpp"

#include "causalvid/attention.hpp"

#include <Eigen/QR>

#include <cmath>
#include <random>
#include <string>

namespace causalvid {

namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double u = kGeluK * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    const double du = kGeluK * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

void layer_norm(const Mat& x, Mat& xhat, Eigen::VectorXd& rstd) {
    const Eigen::Index d = x.cols();
    xhat.resize(x.rows(), d);
    rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / static_cast<double>(d);
        const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd(r) = rs;
        xhat.row(r) = (x.row(r).array() - mean) * rs;
    }
}

Mat layer_norm_backward(const Mat& xhat, const Eigen::VectorXd& rstd, const Mat& dxhat) {
    const double d = static_cast<double>(xhat.cols());
    Mat dx(xhat.rows(), xhat.cols());
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() / d;
        const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / d;
        dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

// h = xhat * (1 + scale_f) + shift_f for each frame's block of S rows.
Mat modulate(const Mat& xhat, const Mat& mod, Eigen::Index shift_col, Eigen::Index scale_col, int tokens) {
    const Eigen::Index d = xhat.cols();
    Mat h(xhat.rows(), d);
    for (Eigen::Index f = 0; f < mod.rows(); ++f) {
        const RowVec shift = mod.block(f, shift_col, 1, d);
        const RowVec scale = (mod.block(f, scale_col, 1, d).array() + 1.0).matrix();
        h.middleRows(f * tokens, tokens) =
            (xhat.middleRows(f * tokens, tokens).array().rowwise() * scale.array()).rowwise() + shift.array();
    }
    return h;
}

// Backward of modulate: writes shift/scale gradients into d_mod and
// returns d xhat.
Mat modulate_backward(const Mat& xhat, const Mat& mod, const Mat& dh, Mat& d_mod, Eigen::Index shift_col,
                      Eigen::Index scale_col, int tokens) {
    const Eigen::Index d = xhat.cols();
    Mat dxhat(xhat.rows(), d);
    for (Eigen::Index f = 0; f < mod.rows(); ++f) {
        const auto dh_f = dh.middleRows(f * tokens, tokens);
        const auto xh_f = xhat.middleRows(f * tokens, tokens);
        d_mod.block(f, shift_col, 1, d) += dh_f.colwise().sum();
        d_mod.block(f, scale_col, 1, d) += (dh_f.array() * xh_f.array()).colwise().sum().matrix();
        const RowVec scale = (mod.block(f, scale_col, 1, d).array() + 1.0).matrix();
        dxhat.middleRows(f * tokens, tokens) = (dh_f.array().rowwise() * scale.array()).matrix();
    }
    return dxhat;
}

// x += gate_f * y for each frame block.
void add_gated(Mat& x, const Mat& y, const Mat& mod, Eigen::Index gate_col, int tokens) {
    const Eigen::Index d = x.cols();
    for (Eigen::Index f = 0; f < mod.rows(); ++f) {
        const RowVec gate = mod.block(f, gate_col, 1, d);
        x.middleRows(f * tokens, tokens).array() += y.middleRows(f * tokens, tokens).array().rowwise() * gate.array();
    }
}

// Backward of add_gated w.r.t. y and gate; returns d y.
Mat add_gated_backward(const Mat& dx, const Mat& y, const Mat& mod, Mat& d_mod, Eigen::Index gate_col, int tokens) {
    const Eigen::Index d = dx.cols();
    Mat dy(dx.rows(), d);
    for (Eigen::Index f = 0; f < mod.rows(); ++f) {
        const auto dx_f = dx.middleRows(f * tokens, tokens);
        d_mod.block(f, gate_col, 1, d) += (dx_f.array() * y.middleRows(f * tokens, tokens).array()).colwise().sum().matrix();
        const RowVec gate = mod.block(f, gate_col, 1, d);
        dy.middleRows(f * tokens, tokens) = (dx_f.array().rowwise() * gate.array()).matrix();
    }
    return dy;
}

}  // namespace

// Parameter access helpers shared by forward and backward.
struct ModelInternals {
    const CausalVideoTransformer& m;

    ConstMatMap w(const LinearIds& l) const { return m.params_.view(l.w); }
    ConstMatMap b(const LinearIds& l) const { return m.params_.view(l.b); }

    Mat linear(const Mat& x, const LinearIds& l) const { return (x * w(l)).rowwise() + RowVec(b(l)); }

    // Accumulates parameter gradients and returns d x.
    Mat linear_backward(const Mat& x, const Mat& dy, const LinearIds& l, std::vector<double>& grads) const {
        m.params_.view(l.w, grads).noalias() += x.transpose() * dy;
        const RowVec db = dy.colwise().sum();
        m.params_.view(l.b, grads) += db;
        return dy * w(l).transpose();
    }

    void linear_backward_params(const Mat& x, const Mat& dy, const LinearIds& l, std::vector<double>& grads) const {
        m.params_.view(l.w, grads).noalias() += x.transpose() * dy;
        const RowVec db = dy.colwise().sum();
        m.params_.view(l.b, grads) += db;
    }
};

void ModelConfig::validate() const {
    require_config(num_blocks >= 1, "num_blocks must be positive");
    require_config(hidden_dim >= 4 && hidden_dim % 4 == 0, "hidden_dim must be a positive multiple of 4");
    require_config(num_heads >= 1 && hidden_dim % num_heads == 0, "hidden_dim must equal num_heads x head_dim");
    require_config(patch_size >= 1, "patch_size must be positive");
    require_config(height >= 1 && width >= 1 && channels >= 1, "latent_shape must be positive");
    require_config(height % patch_size == 0 && width % patch_size == 0,
                   "latent height and width must be divisible by patch_size");
    require_config(max_frames >= 1, "max_frames must be positive");
    require_config(caption_vocab_size >= 2, "caption_vocab_size must be at least 2");
    require_config(caption_len >= 1, "caption_len must be positive");
    require_config(mlp_ratio >= 1, "mlp_ratio must be positive");
    require_config(prompt_enhance_len >= 0, "prompt_enhance_len must be non-negative");
}

RowVec sinusoidal_embedding(double position, int dim) {
    const int half = dim / 2;
    RowVec e = RowVec::Zero(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e(i) = std::cos(position * freq);
        e(half + i) = std::sin(position * freq);
    }
    return e;
}

size_t expected_parameter_count(const ModelConfig& cfg) {
    const size_t d = static_cast<size_t>(cfg.hidden_dim);
    const size_t pd = static_cast<size_t>(cfg.patch_dim());
    const size_t md = static_cast<size_t>(cfg.mlp_dim());
    const auto lin = [](size_t in, size_t out) { return in * out + out; };
    const size_t block = lin(d, 6 * d) + 12 * lin(d, d) + lin(d, md) + lin(md, d);
    return lin(pd, d) + 2 * lin(d, d) + static_cast<size_t>(cfg.caption_vocab_size) * d +
           static_cast<size_t>(cfg.num_blocks) * block + lin(d, 2 * d) + lin(d, 2 * pd);
}

CausalVideoTransformer::CausalVideoTransformer(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
}

CausalVideoTransformer::~CausalVideoTransformer() = default;
CausalVideoTransformer::CausalVideoTransformer(const CausalVideoTransformer&) = default;
CausalVideoTransformer& CausalVideoTransformer::operator=(const CausalVideoTransformer&) = default;

void CausalVideoTransformer::build_layout() {
    const int d = cfg_.hidden_dim;
    patch_ = add_linear(params_, "patch", cfg_.patch_dim(), d);
    time1_ = add_linear(params_, "time.fc1", d, d);
    time2_ = add_linear(params_, "time.fc2", d, d);
    caption_table_ = params_.add("caption.table", {cfg_.caption_vocab_size, d});
    for (int b = 0; b < cfg_.num_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        BlockIds ids;
        ids.ada = add_linear(params_, p + "adaln", d, 6 * d);
        for (auto [name, attn] : {std::pair{"spatial", &ids.spatial}, std::pair{"temporal", &ids.temporal},
                                  std::pair{"cross", &ids.cross}}) {
            attn->q = add_linear(params_, p + name + ".q", d, d);
            attn->k = add_linear(params_, p + name + ".k", d, d);
            attn->v = add_linear(params_, p + name + ".v", d, d);
            attn->o = add_linear(params_, p + name + ".o", d, d);
        }
        ids.mlp1 = add_linear(params_, p + "mlp.fc1", d, cfg_.mlp_dim());
        ids.mlp2 = add_linear(params_, p + "mlp.fc2", cfg_.mlp_dim(), d);
        blocks_.push_back(ids);
    }
    final_ada_ = add_linear(params_, "final.adaln", d, 2 * d);
    final_out_ = add_linear(params_, "final.out", d, 2 * cfg_.patch_dim());

    // 2-D sincos table: first half of the width encodes the patch row,
    // second half the patch column.
    spatial_pos_.resize(cfg_.tokens_per_frame(), d);
    for (int y = 0; y < cfg_.grid_h(); ++y) {
        for (int x = 0; x < cfg_.grid_w(); ++x) {
            const int s = y * cfg_.grid_w() + x;
            spatial_pos_.block(s, 0, 1, d / 2) = sinusoidal_embedding(y, d / 2);
            spatial_pos_.block(s, d / 2, 1, d / 2) = sinusoidal_embedding(x, d / 2);
        }
    }
    temporal_pos_.resize(cfg_.max_frames, d);
    for (int f = 0; f < cfg_.max_frames; ++f) {
        temporal_pos_.row(f) = sinusoidal_embedding(f, d);
    }
}

void CausalVideoTransformer::init_parameters(std::uint64_t seed, InitMode mode) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto& values = params_.values();
    std::fill(values.begin(), values.end(), 0.0);

    const auto xavier = [&](const LinearIds& l) {
        const double bound = std::sqrt(6.0 / (l.in + l.out));
        std::uniform_real_distribution<double> u(-bound, bound);
        auto w = params_.view(l.w);
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = u(rng);
        }
    };
    const auto gaussian = [&](size_t idx, double stddev) {
        auto w = params_.view(idx);
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = stddev * normal(rng);
        }
    };
    const bool all = mode == InitMode::kRandomAll;

    xavier(patch_);
    gaussian(time1_.w, 0.02 * std::sqrt(static_cast<double>(cfg_.hidden_dim)));
    gaussian(time2_.w, 0.02 * std::sqrt(static_cast<double>(cfg_.hidden_dim)));
    gaussian(caption_table_, all ? 1.0 : 0.5);
    for (const auto& b : blocks_) {
        for (const AttnIds* a : {&b.spatial, &b.temporal, &b.cross}) {
            xavier(a->q);
            xavier(a->k);
            xavier(a->v);
            if (all || a != &b.cross) {
                xavier(a->o);
            }
        }
        xavier(b.mlp1);
        xavier(b.mlp2);
        if (all) {
            gaussian(b.ada.w, 0.3);
            gaussian(b.ada.b, 0.3);
        }
    }
    if (all) {
        gaussian(final_ada_.w, 0.3);
        gaussian(final_ada_.b, 0.3);
        xavier(final_out_);
        for (const auto& e : params_.entries()) {
            if (e.shape.size() == 1) {
                gaussian(params_.index_of(e.name), 0.1);
            }
        }
    }
}

Mat extract_patches(const Mat& z, const ModelConfig& cfg) {
    require(z.cols() == cfg.frame_dim(), "latent frame size does not match the model configuration");
    const int p = cfg.patch_size;
    const int c = cfg.channels;
    const int s = cfg.tokens_per_frame();
    Mat patches(z.rows() * s, cfg.patch_dim());
    for (Eigen::Index f = 0; f < z.rows(); ++f) {
        for (int gy = 0; gy < cfg.grid_h(); ++gy) {
            for (int gx = 0; gx < cfg.grid_w(); ++gx) {
                const Eigen::Index row = f * s + gy * cfg.grid_w() + gx;
                for (int dy = 0; dy < p; ++dy) {
                    for (int dx = 0; dx < p; ++dx) {
                        const int y = gy * p + dy;
                        const int x = gx * p + dx;
                        for (int ch = 0; ch < c; ++ch) {
                            patches(row, (dy * p + dx) * c + ch) = z(f, (y * cfg.width + x) * c + ch);
                        }
                    }
                }
            }
        }
    }
    return patches;
}

Mat fold_patches(const Mat& patches, const ModelConfig& cfg) {
    const int p = cfg.patch_size;
    const int c = cfg.channels;
    const int s = cfg.tokens_per_frame();
    require(patches.cols() == cfg.patch_dim() && patches.rows() % s == 0, "fold_patches: shape mismatch");
    Mat z(patches.rows() / s, cfg.frame_dim());
    for (Eigen::Index f = 0; f < z.rows(); ++f) {
        for (int gy = 0; gy < cfg.grid_h(); ++gy) {
            for (int gx = 0; gx < cfg.grid_w(); ++gx) {
                const Eigen::Index row = f * s + gy * cfg.grid_w() + gx;
                for (int dy = 0; dy < p; ++dy) {
                    for (int dx = 0; dx < p; ++dx) {
                        const int y = gy * p + dy;
                        const int x = gx * p + dx;
                        for (int ch = 0; ch < c; ++ch) {
                            z(f, (y * cfg.width + x) * c + ch) = patches(row, (dy * p + dx) * c + ch);
                        }
                    }
                }
            }
        }
    }
    return z;
}

TokenGrid CausalVideoTransformer::patchify(const Mat& z, const std::vector<std::int64_t>& frame_ids) const {
    require(static_cast<Eigen::Index>(frame_ids.size()) == z.rows(), "patchify: one frame id per frame required");
    const ModelInternals in{*this};
    const int s = cfg_.tokens_per_frame();
    TokenGrid grid;
    grid.tokens = in.linear(extract_patches(z, cfg_), patch_);
    for (Eigen::Index f = 0; f < z.rows(); ++f) {
        const RowVec tpos = temporal_pos_.row(cyclic_position(frame_ids[static_cast<size_t>(f)], cfg_.max_frames));
        grid.tokens.middleRows(f * s, s) += spatial_pos_;
        grid.tokens.middleRows(f * s, s).rowwise() += tpos;
    }
    grid.frame_ids = frame_ids;
    grid.timesteps.assign(frame_ids.size(), 0);
    return grid;
}

Mat CausalVideoTransformer::unpatchify(const TokenGrid& grid) const {
    const ModelInternals in{*this};
    const int s = cfg_.tokens_per_frame();
    Mat x = grid.tokens;
    for (size_t f = 0; f < grid.frame_ids.size(); ++f) {
        const auto fr = static_cast<Eigen::Index>(f);
        x.middleRows(fr * s, s) -= spatial_pos_;
        x.middleRows(fr * s, s).rowwise() -= temporal_pos_.row(cyclic_position(grid.frame_ids[f], cfg_.max_frames));
    }
    x.rowwise() -= RowVec(in.b(patch_));
    // x = patches W  =>  W^T patches^T = x^T
    const Mat wt = in.w(patch_).transpose();
    const Mat patches = wt.completeOrthogonalDecomposition().solve(x.transpose()).transpose();
    return fold_patches(patches, cfg_);
}

RowVec CausalVideoTransformer::timestep_embedding(int t) const {
    const ModelInternals in{*this};
    const Mat sin = sinusoidal_embedding(t, cfg_.hidden_dim);
    const Mat pre = in.linear(sin, time1_);
    return in.linear(pre.unaryExpr(&silu), time2_);
}

AdaLNModulation CausalVideoTransformer::adaln_modulate(const RowVec& emb, int block) const {
    const ModelInternals in{*this};
    const Mat act = emb.unaryExpr(&silu);
    const Mat mod = in.linear(act, blocks_.at(static_cast<size_t>(block)).ada);
    const int d = cfg_.hidden_dim;
    return {mod.block(0, 0, 1, d),     mod.block(0, d, 1, d),     mod.block(0, 2 * d, 1, d),
            mod.block(0, 3 * d, 1, d), mod.block(0, 4 * d, 1, d), mod.block(0, 5 * d, 1, d)};
}

KVCache CausalVideoTransformer::make_cache() const {
    return KVCache(cfg_.num_blocks, cfg_.max_frames, cfg_.tokens_per_frame(), cfg_.hidden_dim, cfg_.bank_depth());
}

namespace {

// Chooses the enhancement frames for noisy queries from the combined list
// [cache bank (oldest first) ; prompt frames of the input].
std::vector<KeySource> select_subprompt(const ModelConfig& cfg, int cache_bank, int input_prompts) {
    std::vector<KeySource> all;
    for (int i = 0; i < cache_bank; ++i) {
        all.push_back({true, i});
    }
    for (int i = 0; i < input_prompts; ++i) {
        all.push_back({false, i});
    }
    const int total = static_cast<int>(all.size());
    const int want = cfg.prompt_enhance_len;
    int end = total;
    if (cfg.literal_subprompt) {
        end = total - 1;
    }
    const int begin = std::max(0, end - want);
    std::vector<KeySource> out;
    for (int i = begin; i < end; ++i) {
        out.push_back(all[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace

NoisePrediction CausalVideoTransformer::forward(const ForwardInput& in, const ForwardOptions& opts) const {
    const ModelInternals mi{*this};
    const auto n_frames = static_cast<int>(in.z.rows());
    const int s = cfg_.tokens_per_frame();
    const int d = cfg_.hidden_dim;
    const int heads = cfg_.num_heads;

    require(n_frames >= 1, "forward: at least one frame required");
    require(in.z.cols() == cfg_.frame_dim(), "forward: latent frame size does not match the model configuration");
    require(static_cast<int>(in.timesteps.size()) == n_frames, "forward: one timestep per frame required");
    require(static_cast<int>(in.frame_ids.size()) == n_frames, "forward: one frame id per frame required");
    require(in.num_prompt >= 0 && in.num_prompt <= n_frames, "forward: num_prompt outside [0, N]");
    require(static_cast<int>(in.caption.size()) == cfg_.caption_len, "forward: caption length mismatch");
    for (int tok : in.caption) {
        require(tok >= 0 && tok < cfg_.caption_vocab_size, "forward: caption token outside vocabulary");
    }
    for (int f = 0; f < n_frames; ++f) {
        const auto fi = static_cast<size_t>(f);
        require(in.timesteps[fi] >= 0, "forward: negative timestep");
        if (f < in.num_prompt) {
            require(in.timesteps[fi] == 0, "forward: prompt frames must use timestep 0");
        }
        if (f > 0) {
            require(in.frame_ids[fi] > in.frame_ids[fi - 1], "forward: frame ids must be strictly increasing");
        }
    }
    const KVCache* cache = opts.cache;
    int cached = 0;
    std::vector<std::int64_t> cache_ids;
    if (cache) {
        if (cache->layers() != cfg_.num_blocks || cache->tokens_per_frame() != s || cache->dim() != d) {
            throw ContractError("forward: cache layer-count or geometry does not match the model");
        }
        require(opts.tape == nullptr, "forward: backward through a cache is not supported");
        cached = cache->resident();
        cache_ids = cache->resident_ids();
        if (cached > 0) {
            require(cache_ids.back() < in.frame_ids.front(), "forward: cached frames must precede the input frames");
        }
    }
    const int cache_bank = cache ? static_cast<int>(cache->bank(0).size()) : 0;

    ForwardTape* tape = opts.tape;
    if (tape) {
        tape->frames = n_frames;
        tape->caption = in.caption;
        tape->blocks.assign(blocks_.size(), BlockTape{});
    }
    if (opts.record) {
        opts.record->temporal_keys.assign(blocks_.size(), Mat());
        opts.record->temporal_values.assign(blocks_.size(), Mat());
        opts.record->spatial_inputs.assign(blocks_.size(), Mat());
    }

    // Embedding.
    Mat patches = extract_patches(in.z, cfg_);
    Mat x = mi.linear(patches, patch_);
    for (int f = 0; f < n_frames; ++f) {
        const RowVec tpos =
            temporal_pos_.row(cyclic_position(in.frame_ids[static_cast<size_t>(f)], cfg_.max_frames));
        x.middleRows(static_cast<Eigen::Index>(f) * s, s) += spatial_pos_;
        x.middleRows(static_cast<Eigen::Index>(f) * s, s).rowwise() += tpos;
    }

    Mat time_sin(n_frames, d);
    for (int f = 0; f < n_frames; ++f) {
        time_sin.row(f) = sinusoidal_embedding(in.timesteps[static_cast<size_t>(f)], d);
    }
    Mat time_pre = mi.linear(time_sin, time1_);
    Mat temb = mi.linear(time_pre.unaryExpr(&silu), time2_);
    const Mat temb_act = temb.unaryExpr(&silu);

    const auto table = params_.view(caption_table_);
    Mat cap(cfg_.caption_len, d);
    for (int i = 0; i < cfg_.caption_len; ++i) {
        cap.row(i) = table.row(in.caption[static_cast<size_t>(i)]);
    }

    const int enh = cfg_.prompt_enhance_len;
    const std::vector<KeySource> subprompt = select_subprompt(cfg_, cache_bank, in.num_prompt);

    for (size_t b = 0; b < blocks_.size(); ++b) {
        const BlockIds& ids = blocks_[b];
        const Mat mod = mi.linear(temb_act, ids.ada);

        // Spatial attention with frame-prompt enhancement.
        Mat xhat1;
        Eigen::VectorXd rstd1;
        layer_norm(x, xhat1, rstd1);
        Mat h1 = modulate(xhat1, mod, 0, d, s);
        Mat qs = mi.linear(h1, ids.spatial.q);
        Mat ks = mi.linear(h1, ids.spatial.k);
        Mat vs = mi.linear(h1, ids.spatial.v);
        std::vector<Mat> bank_k, bank_v;
        if (cache) {
            for (const Mat& a : cache->bank(static_cast<int>(b))) {
                bank_k.push_back(mi.linear(a, ids.spatial.k));
                bank_v.push_back(mi.linear(a, ids.spatial.v));
            }
        }
        Mat attn_s(static_cast<Eigen::Index>(n_frames) * s, d);
        std::vector<std::vector<KeySource>> sources(static_cast<size_t>(n_frames));
        std::vector<std::vector<Mat>> probs_s(tape ? static_cast<size_t>(n_frames) : 0);
        for (int f = 0; f < n_frames; ++f) {
            auto& src = sources[static_cast<size_t>(f)];
            src.push_back({false, f});
            if (f < in.num_prompt) {
                for (int r = 0; r < enh; ++r) {
                    src.push_back({false, f});
                }
            } else {
                src.insert(src.end(), subprompt.begin(), subprompt.end());
            }
            Mat kg(static_cast<Eigen::Index>(src.size()) * s, d);
            Mat vg(kg.rows(), d);
            for (size_t i = 0; i < src.size(); ++i) {
                const auto r0 = static_cast<Eigen::Index>(i) * s;
                if (src[i].from_cache) {
                    kg.middleRows(r0, s) = bank_k[static_cast<size_t>(src[i].index)];
                    vg.middleRows(r0, s) = bank_v[static_cast<size_t>(src[i].index)];
                } else {
                    kg.middleRows(r0, s) = ks.middleRows(static_cast<Eigen::Index>(src[i].index) * s, s);
                    vg.middleRows(r0, s) = vs.middleRows(static_cast<Eigen::Index>(src[i].index) * s, s);
                }
            }
            attn_s.middleRows(static_cast<Eigen::Index>(f) * s, s) =
                multihead_attention(qs.middleRows(static_cast<Eigen::Index>(f) * s, s), kg, vg, heads, {},
                                    tape ? &probs_s[static_cast<size_t>(f)] : nullptr);
        }
        Mat out_s = mi.linear(attn_s, ids.spatial.o);
        add_gated(x, out_s, mod, 2 * d, s);
        if (opts.record) {
            opts.record->spatial_inputs[b] = h1;
        }

        // Causal temporal attention, one sequence per spatial site.
        Mat xhat2;
        Eigen::VectorXd rstd2;
        layer_norm(x, xhat2, rstd2);
        Mat h2 = modulate(xhat2, mod, 0, d, s);
        Mat qt = mi.linear(h2, ids.temporal.q);
        Mat kt = mi.linear(h2, ids.temporal.k);
        Mat vt = mi.linear(h2, ids.temporal.v);
        if (opts.record) {
            opts.record->temporal_keys[b] = kt;
            opts.record->temporal_values[b] = vt;
        }
        std::vector<int> visible(static_cast<size_t>(n_frames));
        for (int i = 0; i < n_frames; ++i) {
            visible[static_cast<size_t>(i)] = cached + (cfg_.causal ? i + 1 : n_frames);
        }
        Mat attn_t(static_cast<Eigen::Index>(n_frames) * s, d);
        std::vector<std::vector<Mat>> probs_t(tape ? static_cast<size_t>(s) : 0);
        Mat q_site(n_frames, d), k_site(cached + n_frames, d), v_site(cached + n_frames, d);
        for (int site = 0; site < s; ++site) {
            for (int c = 0; c < cached; ++c) {
                const auto cid = cache_ids[static_cast<size_t>(c)];
                k_site.row(c) = cache->keys(static_cast<int>(b), cid).row(site);
                v_site.row(c) = cache->values(static_cast<int>(b), cid).row(site);
            }
            for (int f = 0; f < n_frames; ++f) {
                const Eigen::Index r = static_cast<Eigen::Index>(f) * s + site;
                q_site.row(f) = qt.row(r);
                k_site.row(cached + f) = kt.row(r);
                v_site.row(cached + f) = vt.row(r);
            }
            const Mat o = multihead_attention(q_site, k_site, v_site, heads, visible,
                                              tape ? &probs_t[static_cast<size_t>(site)] : nullptr);
            for (int f = 0; f < n_frames; ++f) {
                attn_t.row(static_cast<Eigen::Index>(f) * s + site) = o.row(f);
            }
        }
        if (opts.stats) {
            opts.stats->temporal_score_entries +=
                static_cast<std::int64_t>(s) * heads * n_frames * (cached + n_frames);
        }
        Mat out_t = mi.linear(attn_t, ids.temporal.o);
        add_gated(x, out_t, mod, 2 * d, s);

        // Cross-attention to caption tokens (un-gated).
        Mat xhat3;
        Eigen::VectorXd rstd3;
        layer_norm(x, xhat3, rstd3);
        Mat qc = mi.linear(xhat3, ids.cross.q);
        Mat kc = mi.linear(cap, ids.cross.k);
        Mat vc = mi.linear(cap, ids.cross.v);
        std::vector<Mat> probs_c;
        Mat attn_c = multihead_attention(qc, kc, vc, heads, {}, tape ? &probs_c : nullptr);
        x += mi.linear(attn_c, ids.cross.o);

        // Feed-forward.
        Mat xhat4;
        Eigen::VectorXd rstd4;
        layer_norm(x, xhat4, rstd4);
        Mat h4 = modulate(xhat4, mod, 3 * d, 4 * d, s);
        Mat pre_act = mi.linear(h4, ids.mlp1);
        Mat act = pre_act.unaryExpr(&gelu);
        Mat out_m = mi.linear(act, ids.mlp2);
        add_gated(x, out_m, mod, 5 * d, s);

        if (tape) {
            BlockTape& bt = tape->blocks[b];
            bt.mod = mod;
            bt.rstd1 = std::move(rstd1);
            bt.rstd2 = std::move(rstd2);
            bt.rstd3 = std::move(rstd3);
            bt.rstd4 = std::move(rstd4);
            bt.xhat1 = std::move(xhat1);
            bt.h1 = std::move(h1);
            bt.qs = std::move(qs);
            bt.ks = std::move(ks);
            bt.vs = std::move(vs);
            bt.attn_s = std::move(attn_s);
            bt.out_s = std::move(out_s);
            bt.sources = std::move(sources);
            bt.probs_s = std::move(probs_s);
            bt.xhat2 = std::move(xhat2);
            bt.h2 = std::move(h2);
            bt.qt = std::move(qt);
            bt.kt = std::move(kt);
            bt.vt = std::move(vt);
            bt.attn_t = std::move(attn_t);
            bt.out_t = std::move(out_t);
            bt.probs_t = std::move(probs_t);
            bt.xhat3 = std::move(xhat3);
            bt.qc = std::move(qc);
            bt.kc = std::move(kc);
            bt.vc = std::move(vc);
            bt.attn_c = std::move(attn_c);
            bt.probs_c = std::move(probs_c);
            bt.xhat4 = std::move(xhat4);
            bt.h4 = std::move(h4);
            bt.pre_act = std::move(pre_act);
            bt.act = std::move(act);
            bt.out_m = std::move(out_m);
        }
    }

    // Output head.
    const Mat mod_final = mi.linear(temb_act, final_ada_);
    Mat xhat_f;
    Eigen::VectorXd rstd_f;
    layer_norm(x, xhat_f, rstd_f);
    Mat h_f = modulate(xhat_f, mod_final, 0, d, s);
    const Mat out = mi.linear(h_f, final_out_);
    const int pd = cfg_.patch_dim();

    NoisePrediction pred;
    pred.eps = fold_patches(out.leftCols(pd), cfg_);
    pred.v = fold_patches(out.rightCols(pd), cfg_);

    if (tape) {
        tape->patches = std::move(patches);
        tape->time_sin = std::move(time_sin);
        tape->time_pre = std::move(time_pre);
        tape->temb = std::move(temb);
        tape->cap = std::move(cap);
        tape->mod_final = mod_final;
        tape->rstd_final = std::move(rstd_f);
        tape->xhat_final = std::move(xhat_f);
        tape->h_final = std::move(h_f);
    }
    return pred;
}

void CausalVideoTransformer::backward(const ForwardTape& tape, const Mat& d_eps, const Mat& d_v,
                                      std::vector<double>& grads) const {
    const ModelInternals mi{*this};
    const int n_frames = tape.frames;
    const int s = cfg_.tokens_per_frame();
    const int d = cfg_.hidden_dim;
    const int heads = cfg_.num_heads;
    const int pd = cfg_.patch_dim();
    require(grads.size() == params_.size(), "backward: gradient buffer size mismatch");
    require(d_eps.rows() == n_frames && d_v.rows() == n_frames, "backward: output gradient shape mismatch");

    const Mat temb_act = tape.temb.unaryExpr(&silu);
    Mat d_temb_act = Mat::Zero(n_frames, d);

    // Output head.
    Mat d_out(static_cast<Eigen::Index>(n_frames) * s, 2 * pd);
    d_out.leftCols(pd) = extract_patches(d_eps, cfg_);
    d_out.rightCols(pd) = extract_patches(d_v, cfg_);
    Mat d_h = mi.linear_backward(tape.h_final, d_out, final_out_, grads);
    Mat d_mod_final = Mat::Zero(n_frames, 2 * d);
    Mat d_xhat = modulate_backward(tape.xhat_final, tape.mod_final, d_h, d_mod_final, 0, d, s);
    Mat dx = layer_norm_backward(tape.xhat_final, tape.rstd_final, d_xhat);
    d_temb_act += mi.linear_backward(temb_act, d_mod_final, final_ada_, grads);

    Mat d_cap = Mat::Zero(cfg_.caption_len, d);

    for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
        const BlockIds& ids = blocks_[static_cast<size_t>(b)];
        const BlockTape& bt = tape.blocks[static_cast<size_t>(b)];
        Mat d_mod = Mat::Zero(n_frames, 6 * d);

        // Feed-forward.
        {
            const Mat d_out_m = add_gated_backward(dx, bt.out_m, bt.mod, d_mod, 5 * d, s);
            const Mat d_act = mi.linear_backward(bt.act, d_out_m, ids.mlp2, grads);
            const Mat d_pre = d_act.cwiseProduct(bt.pre_act.unaryExpr(&gelu_grad));
            const Mat d_h4 = mi.linear_backward(bt.h4, d_pre, ids.mlp1, grads);
            const Mat d_xhat4 = modulate_backward(bt.xhat4, bt.mod, d_h4, d_mod, 3 * d, 4 * d, s);
            dx += layer_norm_backward(bt.xhat4, bt.rstd4, d_xhat4);
        }

        // Cross-attention.
        {
            const Mat d_attn = mi.linear_backward(bt.attn_c, dx, ids.cross.o, grads);
            Mat dq = Mat::Zero(bt.qc.rows(), d);
            Mat dk = Mat::Zero(bt.kc.rows(), d);
            Mat dv = Mat::Zero(bt.vc.rows(), d);
            multihead_attention_backward(bt.qc, bt.kc, bt.vc, heads, bt.probs_c, d_attn, dq, dk, dv);
            d_cap += mi.linear_backward(tape.cap, dk, ids.cross.k, grads);
            d_cap += mi.linear_backward(tape.cap, dv, ids.cross.v, grads);
            const Mat d_xhat3 = mi.linear_backward(bt.xhat3, dq, ids.cross.q, grads);
            dx += layer_norm_backward(bt.xhat3, bt.rstd3, d_xhat3);
        }

        // Temporal attention.
        {
            const Mat d_out_t = add_gated_backward(dx, bt.out_t, bt.mod, d_mod, 2 * d, s);
            const Mat d_attn = mi.linear_backward(bt.attn_t, d_out_t, ids.temporal.o, grads);
            Mat dq = Mat::Zero(bt.qt.rows(), d);
            Mat dk = Mat::Zero(bt.kt.rows(), d);
            Mat dv = Mat::Zero(bt.vt.rows(), d);
            Mat q_site(n_frames, d), k_site(n_frames, d), v_site(n_frames, d), do_site(n_frames, d);
            for (int site = 0; site < s; ++site) {
                for (int f = 0; f < n_frames; ++f) {
                    const Eigen::Index r = static_cast<Eigen::Index>(f) * s + site;
                    q_site.row(f) = bt.qt.row(r);
                    k_site.row(f) = bt.kt.row(r);
                    v_site.row(f) = bt.vt.row(r);
                    do_site.row(f) = d_attn.row(r);
                }
                Mat dqs = Mat::Zero(n_frames, d), dks = Mat::Zero(n_frames, d), dvs = Mat::Zero(n_frames, d);
                multihead_attention_backward(q_site, k_site, v_site, heads, bt.probs_t[static_cast<size_t>(site)],
                                             do_site, dqs, dks, dvs);
                for (int f = 0; f < n_frames; ++f) {
                    const Eigen::Index r = static_cast<Eigen::Index>(f) * s + site;
                    dq.row(r) = dqs.row(f);
                    dk.row(r) = dks.row(f);
                    dv.row(r) = dvs.row(f);
                }
            }
            Mat d_h2 = mi.linear_backward(bt.h2, dq, ids.temporal.q, grads);
            d_h2 += mi.linear_backward(bt.h2, dk, ids.temporal.k, grads);
            d_h2 += mi.linear_backward(bt.h2, dv, ids.temporal.v, grads);
            const Mat d_xhat2 = modulate_backward(bt.xhat2, bt.mod, d_h2, d_mod, 0, d, s);
            dx += layer_norm_backward(bt.xhat2, bt.rstd2, d_xhat2);
        }

        // Spatial attention.
        {
            const Mat d_out_s = add_gated_backward(dx, bt.out_s, bt.mod, d_mod, 2 * d, s);
            const Mat d_attn = mi.linear_backward(bt.attn_s, d_out_s, ids.spatial.o, grads);
            Mat dq = Mat::Zero(bt.qs.rows(), d);
            Mat dk = Mat::Zero(bt.ks.rows(), d);
            Mat dv = Mat::Zero(bt.vs.rows(), d);
            for (int f = 0; f < n_frames; ++f) {
                const auto& src = bt.sources[static_cast<size_t>(f)];
                const Eigen::Index rows = static_cast<Eigen::Index>(src.size()) * s;
                Mat kg(rows, d), vg(rows, d);
                for (size_t i = 0; i < src.size(); ++i) {
                    kg.middleRows(static_cast<Eigen::Index>(i) * s, s) =
                        bt.ks.middleRows(static_cast<Eigen::Index>(src[i].index) * s, s);
                    vg.middleRows(static_cast<Eigen::Index>(i) * s, s) =
                        bt.vs.middleRows(static_cast<Eigen::Index>(src[i].index) * s, s);
                }
                Mat dqf = Mat::Zero(s, d), dkg = Mat::Zero(rows, d), dvg = Mat::Zero(rows, d);
                multihead_attention_backward(bt.qs.middleRows(static_cast<Eigen::Index>(f) * s, s), kg, vg, heads,
                                             bt.probs_s[static_cast<size_t>(f)],
                                             d_attn.middleRows(static_cast<Eigen::Index>(f) * s, s), dqf, dkg, dvg);
                dq.middleRows(static_cast<Eigen::Index>(f) * s, s) += dqf;
                for (size_t i = 0; i < src.size(); ++i) {
                    dk.middleRows(static_cast<Eigen::Index>(src[i].index) * s, s) +=
                        dkg.middleRows(static_cast<Eigen::Index>(i) * s, s);
                    dv.middleRows(static_cast<Eigen::Index>(src[i].index) * s, s) +=
                        dvg.middleRows(static_cast<Eigen::Index>(i) * s, s);
                }
            }
            Mat d_h1 = mi.linear_backward(bt.h1, dq, ids.spatial.q, grads);
            d_h1 += mi.linear_backward(bt.h1, dk, ids.spatial.k, grads);
            d_h1 += mi.linear_backward(bt.h1, dv, ids.spatial.v, grads);
            const Mat d_xhat1 = modulate_backward(bt.xhat1, bt.mod, d_h1, d_mod, 0, d, s);
            dx += layer_norm_backward(bt.xhat1, bt.rstd1, d_xhat1);
        }

        d_temb_act += mi.linear_backward(temb_act, d_mod, ids.ada, grads);
    }

    // Caption embedding table.
    auto g_table = params_.view(caption_table_, grads);
    for (int i = 0; i < cfg_.caption_len; ++i) {
        g_table.row(tape.caption[static_cast<size_t>(i)]) += d_cap.row(i);
    }

    // Timestep MLP.
    const Mat d_temb = d_temb_act.cwiseProduct(tape.temb.unaryExpr(&silu_grad));
    const Mat pre_act = tape.time_pre.unaryExpr(&silu);
    const Mat d_pre_act = mi.linear_backward(pre_act, d_temb, time2_, grads);
    const Mat d_pre = d_pre_act.cwiseProduct(tape.time_pre.unaryExpr(&silu_grad));
    mi.linear_backward_params(tape.time_sin, d_pre, time1_, grads);

    // Patch embedding (positional tables are fixed).
    mi.linear_backward_params(tape.patches, dx, patch_, grads);
}

}  // namespace causalvid
