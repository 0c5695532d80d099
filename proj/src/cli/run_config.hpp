#pragma once

#include "causalvid/inference.hpp"
#include "causalvid/model_config.hpp"
#include "causalvid/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace causalvid::cli {

// Every setting a subcommand may read. Defaults follow the desk-scale
// configuration; files and flags override them by key.
struct RunConfig {
    RunConfig() { train.seq_len = 49; }

    ModelConfig model;
    // chunk_len and seed below also drive training.
    TrainConfig train;

    // Diffusion schedule.
    int diffusion_steps = 1000;
    double beta1 = 1e-4;
    double betaT = 0.02;
    int ddim_steps = 100;

    // Inference.
    int chunk_len = 16;
    double cfg_scale = 7.5;
    int num_chunks = 6;
    bool use_cache = true;

    // Data synthesis.
    int data_count = 200;
    int data_frames = 64;

    // Evaluation: conditioning frames before the first chunk.
    int eval_offset = 1;
    bool eval_per_chunk = false;

    // Benchmark.
    int bench_prefix = 48;
    int bench_chunks = 1;
    int bench_ddim_steps = 10;

    std::string data_dir = "data";
    std::string checkpoint;
    std::string out = "out";
    std::uint64_t seed = 0;

    // Key names accepted in config files and --set.
    static std::vector<std::string> keys();

    void set(const std::string& key, const std::string& value);
    std::map<std::string, std::string> to_map() const;

    void validate() const;
};

// Flat "key = value" text; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

void write_resolved_config(const std::filesystem::path& dir, const RunConfig& cfg);

}  // namespace causalvid::cli
