#include "causalvid/training.hpp"

#include "causalvid/checkpoint.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace causalvid {

void TrainConfig::validate() const {
    require_config(chunk_len >= 1, "chunk_len must be positive");
    require_config(seq_len >= chunk_len + 1, "seq_len must be at least chunk_len + 1");
    require_config(batch_size >= 1, "batch_size must be positive");
    require_config(total_steps >= 0, "total_steps must be non-negative");
    require_config(learning_rate > 0.0, "learning_rate must be positive");
    require_config(weight_decay >= 0.0, "weight_decay must be non-negative");
    require_config(caption_dropout_p >= 0.0 && caption_dropout_p <= 1.0, "caption_dropout_p must lie in [0, 1]");
    require_config(loss_vlb_weight >= 0.0, "loss_vlb_weight must be non-negative");
    require_config(frame_interval >= 1, "frame_interval must be positive");
    require_config(log_interval >= 1, "log_interval must be positive");
    require_config(checkpoint_interval >= 1, "checkpoint_interval must be positive");
}

std::vector<int> prompt_length_support(int n, int N) {
    std::vector<int> out;
    for (int p = 1; p <= N - n; p += n) {
        out.push_back(p);
    }
    return out;
}

int sample_prompt_length(int n, int N, std::mt19937_64& rng) {
    require(n >= 1, "sample_prompt_length: chunk length must be positive");
    const std::vector<int> support = prompt_length_support(n, N);
    if (support.empty()) {
        throw ContractError("sample_prompt_length: no prompt length fits N=" + std::to_string(N) +
                            " with n=" + std::to_string(n));
    }
    return support[std::uniform_int_distribution<size_t>(0, support.size() - 1)(rng)];
}

TrainSample build_sample(const Mat& clip, const std::vector<int>& caption, int prompt_len, int t, double dropout_p,
                         std::mt19937_64& rng, const Schedule& s) {
    const auto N = static_cast<int>(clip.rows());
    require(prompt_len >= 0 && prompt_len < N, "build_sample: prompt length must leave a noisy frame");
    s.check_step(t);
    TrainSample out;
    out.z0 = clip;
    out.prompt_len = prompt_len;
    out.t = t;
    out.eps = Mat::Zero(clip.rows(), clip.cols());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = prompt_len; r < clip.rows(); ++r) {
        for (Eigen::Index c = 0; c < clip.cols(); ++c) {
            out.eps(r, c) = normal(rng);
        }
    }
    out.z_input = clip;
    const int noisy = N - prompt_len;
    out.z_input.bottomRows(noisy) = q_sample(clip.bottomRows(noisy), t, out.eps.bottomRows(noisy), s);
    out.timesteps.assign(static_cast<size_t>(N), 0);
    out.loss_mask.assign(static_cast<size_t>(N), 0);
    for (int f = prompt_len; f < N; ++f) {
        out.timesteps[static_cast<size_t>(f)] = t;
        out.loss_mask[static_cast<size_t>(f)] = 1;
    }
    const bool drop = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < dropout_p;
    out.caption = drop ? std::vector<int>(caption.size(), kNullToken) : caption;
    return out;
}

namespace {

double masked_element_count(const TrainBatch& batch) {
    double count = 0.0;
    for (const auto& b : batch) {
        for (int m : b.loss_mask) {
            count += m ? static_cast<double>(b.z0.cols()) : 0.0;
        }
    }
    if (count == 0.0) {
        throw ContractError("masked loss: the loss mask is all zero, nothing to train");
    }
    return count;
}

}  // namespace

double masked_simple_loss(const std::vector<NoisePrediction>& preds, const TrainBatch& batch,
                          std::vector<Mat>* d_eps) {
    require(preds.size() == batch.size(), "masked_simple_loss: prediction count mismatch");
    const double count = masked_element_count(batch);
    if (d_eps) {
        d_eps->assign(batch.size(), Mat());
    }
    double total = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& b = batch[i];
        require(preds[i].eps.rows() == b.eps.rows() && preds[i].eps.cols() == b.eps.cols(),
                "masked_simple_loss: shape mismatch");
        if (d_eps) {
            (*d_eps)[i] = Mat::Zero(b.eps.rows(), b.eps.cols());
        }
        for (Eigen::Index r = 0; r < b.eps.rows(); ++r) {
            if (!b.loss_mask[static_cast<size_t>(r)]) {
                continue;
            }
            const auto diff = preds[i].eps.row(r) - b.eps.row(r);
            total += diff.squaredNorm();
            if (d_eps) {
                (*d_eps)[i].row(r) = (2.0 / count) * diff;
            }
        }
    }
    return total / count;
}

double masked_vlb_loss(const std::vector<NoisePrediction>& preds, const TrainBatch& batch, const Schedule& s,
                       std::vector<Mat>* d_v) {
    require(preds.size() == batch.size(), "masked_vlb_loss: prediction count mismatch");
    const double count = masked_element_count(batch);
    if (d_v) {
        d_v->assign(batch.size(), Mat());
    }
    double total = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& b = batch[i];
        std::vector<Eigen::Index> rows;
        for (Eigen::Index r = 0; r < b.z0.rows(); ++r) {
            if (b.loss_mask[static_cast<size_t>(r)]) {
                rows.push_back(r);
            }
        }
        if (d_v) {
            (*d_v)[i] = Mat::Zero(b.z0.rows(), b.z0.cols());
        }
        if (rows.empty()) {
            continue;
        }
        const auto m = static_cast<Eigen::Index>(rows.size());
        NoisePrediction sub{Mat(m, b.z0.cols()), Mat(m, b.z0.cols())};
        Mat z0(m, b.z0.cols()), zt(m, b.z0.cols());
        for (Eigen::Index j = 0; j < m; ++j) {
            sub.eps.row(j) = preds[i].eps.row(rows[static_cast<size_t>(j)]);
            sub.v.row(j) = preds[i].v.row(rows[static_cast<size_t>(j)]);
            z0.row(j) = b.z0.row(rows[static_cast<size_t>(j)]);
            zt.row(j) = b.z_input.row(rows[static_cast<size_t>(j)]);
        }
        Mat grad;
        const auto per_row = vlb_rows(sub, z0, zt, b.t, s, d_v ? &grad : nullptr);
        for (double v : per_row) {
            total += v;
        }
        if (d_v) {
            for (Eigen::Index j = 0; j < m; ++j) {
                (*d_v)[i].row(rows[static_cast<size_t>(j)]) = grad.row(j) / count;
            }
        }
    }
    return total / count;
}

AdamW::AdamW(size_t size, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
    require(params.size() == m_.size() && grads.size() == m_.size(), "AdamW: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i] * grads[i];
        const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        params[i] -= lr_ * (update + wd_ * params[i]);
    }
}

StepLosses batch_loss_and_grad(const CausalVideoTransformer& model, const TrainBatch& batch, const Schedule& s,
                               double vlb_weight, std::vector<double>* grads) {
    std::vector<NoisePrediction> preds;
    std::vector<ForwardTape> tapes(grads ? batch.size() : 0);
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& b = batch[i];
        ForwardInput in;
        in.z = b.z_input;
        in.timesteps = b.timesteps;
        in.frame_ids.resize(b.timesteps.size());
        for (size_t f = 0; f < in.frame_ids.size(); ++f) {
            in.frame_ids[f] = static_cast<std::int64_t>(f);
        }
        in.num_prompt = b.prompt_len;
        in.caption = b.caption;
        ForwardOptions opts;
        opts.tape = grads ? &tapes[i] : nullptr;
        preds.push_back(model.forward(in, opts));
    }
    std::vector<Mat> d_eps, d_v;
    StepLosses out;
    out.simple = masked_simple_loss(preds, batch, grads ? &d_eps : nullptr);
    out.vlb = masked_vlb_loss(preds, batch, s, grads ? &d_v : nullptr);
    out.total = out.simple + vlb_weight * out.vlb;
    if (grads) {
        grads->assign(model.parameter_count(), 0.0);
        for (size_t i = 0; i < batch.size(); ++i) {
            model.backward(tapes[i], d_eps[i], vlb_weight * d_v[i], *grads);
        }
    }
    return out;
}

StepLosses train_step(CausalVideoTransformer& model, const TrainBatch& batch, AdamW& opt, const Schedule& s,
                      double vlb_weight) {
    std::vector<double> grads;
    const StepLosses losses = batch_loss_and_grad(model, batch, s, vlb_weight, &grads);
    bool finite = std::isfinite(losses.total);
    for (double g : grads) {
        finite = finite && std::isfinite(g);
    }
    if (!finite) {
        std::ostringstream msg;
        msg << "non-finite loss or gradient (simple=" << losses.simple << ", vlb=" << losses.vlb
            << "); batch source clips:";
        for (const auto& b : batch) {
            msg << ' ' << b.source_index << "(P=" << b.prompt_len << ",t=" << b.t << ')';
        }
        throw NumericError(msg.str());
    }
    auto& values = model.parameters().values();
    opt.step(values, grads);
    return losses;
}

Dataset load_dataset(const std::filesystem::path& dir, int seq_len, int frame_interval) {
    const auto records = read_manifest(dir / "manifest.tsv");
    Dataset data;
    const long need = static_cast<long>(seq_len) * frame_interval;
    for (const auto& r : records) {
        Video v = read_video(dir / r.path);
        if (v.frames < need) {
            continue;
        }
        data.videos.push_back(std::move(v));
        data.captions.push_back(r.caption);
        data.paths.push_back(r.path);
    }
    if (data.videos.empty()) {
        throw IoError("no clip in " + dir.string() + " has the " + std::to_string(need) + " frames training needs");
    }
    return data;
}

TrainBatch make_batch(const Dataset& data, const TrainConfig& cfg, const Schedule& s, std::int64_t step) {
    const auto count = static_cast<std::int64_t>(data.videos.size());
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
    std::mt19937_64 rng(seq);
    TrainBatch batch;
    std::int64_t cached_epoch = -1;
    std::vector<int> order;
    for (int b = 0; b < cfg.batch_size; ++b) {
        const std::int64_t g = step * cfg.batch_size + b;
        const std::int64_t epoch = g / count;
        if (epoch != cached_epoch) {
            order = epoch_order(static_cast<int>(count), cfg.seed + static_cast<std::uint64_t>(epoch));
            cached_epoch = epoch;
        }
        const int idx = order[static_cast<size_t>(g % count)];
        const auto clip = sample_clip(data.videos[static_cast<size_t>(idx)], cfg.seq_len, cfg.frame_interval, rng);
        require(clip.has_value(), "make_batch: dataset clip shorter than the training window");
        const int P = sample_prompt_length(cfg.chunk_len, cfg.seq_len, rng);
        const int t = std::uniform_int_distribution<int>(1, s.T)(rng);
        TrainSample sample = build_sample(frames_to_mat(*clip), data.captions[static_cast<size_t>(idx)], P, t,
                                          cfg.caption_dropout_p, rng, s);
        sample.source_index = idx;
        batch.push_back(std::move(sample));
    }
    return batch;
}

void save_training_checkpoint(const std::filesystem::path& path, const CausalVideoTransformer& model, AdamW& opt,
                              std::int64_t step) {
    CheckpointData ckpt = model_checkpoint(model);
    ckpt.meta["train.step"] = std::to_string(step);
    ckpt.meta["train.adam_steps"] = std::to_string(opt.steps());
    const auto as_array = [](const std::string& name, const std::vector<double>& v) {
        NamedArray a{name, {static_cast<int>(v.size())}, std::vector<float>(v.begin(), v.end())};
        return a;
    };
    ckpt.arrays.push_back(as_array("optim.m", opt.first_moment()));
    ckpt.arrays.push_back(as_array("optim.v", opt.second_moment()));
    write_checkpoint(path, ckpt);
}

std::int64_t load_training_checkpoint(const std::filesystem::path& path, CausalVideoTransformer& model, AdamW& opt) {
    const CheckpointData ckpt = read_checkpoint(path);
    model = model_from_checkpoint(ckpt);
    std::int64_t step = 0;
    const auto it = ckpt.meta.find("train.step");
    if (it != ckpt.meta.end()) {
        step = std::stoll(it->second);
    }
    const auto adam = ckpt.meta.find("train.adam_steps");
    opt.set_steps(adam != ckpt.meta.end() ? std::stoll(adam->second) : step);
    const NamedArray* m = ckpt.find("optim.m");
    const NamedArray* v = ckpt.find("optim.v");
    if (m && v && m->data.size() == opt.first_moment().size() && v->data.size() == opt.second_moment().size()) {
        std::copy(m->data.begin(), m->data.end(), opt.first_moment().begin());
        std::copy(v->data.begin(), v->data.end(), opt.second_moment().begin());
    }
    return step;
}

TrainRun train(CausalVideoTransformer& model, const Dataset& data, const TrainConfig& cfg, const Schedule& s,
               const TrainOutputs& outputs, const std::function<void(const TrainLogEntry&)>& on_step) {
    cfg.validate();
    require_config(cfg.seq_len <= model.config().max_frames, "seq_len must not exceed the model's max_frames");
    if (!outputs.resume_from.empty()) {
        model = model_from_checkpoint(read_checkpoint(outputs.resume_from));
    }
    AdamW opt(model.parameter_count(), cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2,
              cfg.adam_eps);
    std::int64_t step = 0;
    if (!outputs.resume_from.empty()) {
        step = load_training_checkpoint(outputs.resume_from, model, opt);
    }
    std::ofstream log;
    if (!outputs.dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(outputs.dir, ec);
        if (ec) {
            throw IoError("cannot create output directory " + outputs.dir.string() + ": " + ec.message());
        }
        const auto log_path = outputs.dir / "metrics.csv";
        const bool fresh = step == 0 || !std::filesystem::exists(log_path);
        log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) {
            throw IoError("cannot open metrics log " + log_path.string());
        }
        if (fresh) {
            log << "step,loss_simple,loss_vlb,wall_ms\n";
        }
    }

    TrainRun run;
    for (; step < cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const TrainBatch batch = make_batch(data, cfg, s, step);
        const StepLosses losses = train_step(model, batch, opt, s, cfg.loss_vlb_weight);
        TrainLogEntry entry{step, losses.simple, losses.vlb,
                            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
        run.log.push_back(entry);
        if (log.is_open() && step % cfg.log_interval == 0) {
            log << entry.step << ',' << entry.loss_simple << ',' << entry.loss_vlb << ',' << entry.wall_ms << '\n';
        }
        if (on_step) {
            on_step(entry);
        }
        if (!outputs.dir.empty() && (step + 1) % cfg.checkpoint_interval == 0) {
            save_training_checkpoint(outputs.dir / ("step_" + std::to_string(step + 1) + ".cvck"), model, opt,
                                     step + 1);
        }
    }
    run.final_step = step;
    if (!outputs.dir.empty()) {
        save_training_checkpoint(outputs.dir / "final.cvck", model, opt, step);
    }
    return run;
}

}  // namespace causalvid
