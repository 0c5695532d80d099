#pragma once

#include "causalvid/data.hpp"
#include "causalvid/model.hpp"
#include "causalvid/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace causalvid {

struct TrainConfig {
    int seq_len = 17;  // N
    int chunk_len = 4;  // n
    int batch_size = 8;
    int total_steps = 5000;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double caption_dropout_p = 0.1;
    double loss_vlb_weight = 1.0;
    int frame_interval = 1;
    int log_interval = 1;
    int checkpoint_interval = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

// {1, n+1, 2n+1, ...} intersected with [1, N - n].
std::vector<int> prompt_length_support(int n, int N);
int sample_prompt_length(int n, int N, std::mt19937_64& rng);

// One training example: N frames, the first `prompt_len` kept clean.
struct TrainSample {
    Mat z0;        // N x frame_dim clean latents
    Mat z_input;   // N x frame_dim mixed clean/noisy latents
    Mat eps;       // N x frame_dim noise target (zero rows for prompt frames)
    std::vector<int> timesteps;
    std::vector<int> loss_mask;
    std::vector<int> caption;
    int prompt_len = 0;
    int t = 0;
    int source_index = -1;
};

using TrainBatch = std::vector<TrainSample>;

// Builds one sample: q_sample of frames P..N-1 at a shared step t, caption
// replaced by the null caption with probability dropout_p.
TrainSample build_sample(const Mat& clip, const std::vector<int>& caption, int prompt_len, int t, double dropout_p,
                         std::mt19937_64& rng, const Schedule& s);

// Mean squared noise error over masked frames, normalised by the number of
// masked elements across the batch. d_eps (optional) receives the gradient.
double masked_simple_loss(const std::vector<NoisePrediction>& preds, const TrainBatch& batch,
                          std::vector<Mat>* d_eps = nullptr);

// Gaussian KL of the masked frames averaged per element; d_v (optional)
// receives the gradient for the covariance head only.
double masked_vlb_loss(const std::vector<NoisePrediction>& preds, const TrainBatch& batch, const Schedule& s,
                       std::vector<Mat>* d_v = nullptr);

// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW() = default;
    AdamW(size_t size, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(std::span<double> params, std::span<const double> grads);

    std::int64_t steps() const { return t_; }
    std::vector<double>& first_moment() { return m_; }
    std::vector<double>& second_moment() { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    double lr_ = 1e-3, wd_ = 0.0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<double> m_, v_;
};

struct StepLosses {
    double simple = 0.0;
    double vlb = 0.0;
    double total = 0.0;
};

// Loss and gradient of the combined objective over a batch, without
// updating parameters.
StepLosses batch_loss_and_grad(const CausalVideoTransformer& model, const TrainBatch& batch, const Schedule& s,
                               double vlb_weight, std::vector<double>* grads);

// Forward, backward and one AdamW update. Throws NumericError naming the
// batch's source clips when the loss is not finite.
StepLosses train_step(CausalVideoTransformer& model, const TrainBatch& batch, AdamW& opt, const Schedule& s,
                      double vlb_weight);

// Clips loaded into memory with their captions.
struct Dataset {
    std::vector<Video> videos;
    std::vector<std::vector<int>> captions;
    std::vector<std::string> paths;
};

// Loads a manifest directory, skipping clips shorter than
// seq_len * frame_interval.
Dataset load_dataset(const std::filesystem::path& dir, int seq_len, int frame_interval);

// Deterministic batch for a step: a pure function of (seed, step).
TrainBatch make_batch(const Dataset& data, const TrainConfig& cfg, const Schedule& s, std::int64_t step);

struct TrainLogEntry {
    std::int64_t step = 0;
    double loss_simple = 0.0;
    double loss_vlb = 0.0;
    double wall_ms = 0.0;
};

struct TrainRun {
    std::vector<TrainLogEntry> log;
    std::int64_t final_step = 0;
};

struct TrainOutputs {
    std::filesystem::path dir;  // metrics.csv and checkpoints; empty disables
    std::filesystem::path resume_from;
};

// Trains up to cfg.total_steps (counting from the resumed step).
TrainRun train(CausalVideoTransformer& model, const Dataset& data, const TrainConfig& cfg, const Schedule& s,
               const TrainOutputs& outputs = {}, const std::function<void(const TrainLogEntry&)>& on_step = {});

// Checkpoint with model, optimizer moments and the step counter.
void save_training_checkpoint(const std::filesystem::path& path, const CausalVideoTransformer& model, AdamW& opt,
                              std::int64_t step);
std::int64_t load_training_checkpoint(const std::filesystem::path& path, CausalVideoTransformer& model, AdamW& opt);

}  // namespace causalvid
