#pragma once

#include "run_config.hpp"

#include "causalvid/inference.hpp"
#include "causalvid/metrics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace causalvid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitSelftest = 5;
inline constexpr int kExitContract = 6;

// Copies chunk_len and seed into the training section and validates.
void finalize(RunConfig& cfg);

Schedule schedule_for(const RunConfig& cfg);

std::vector<ClipRecord> cmd_make_data(const RunConfig& cfg);

TrainRun cmd_train(const RunConfig& cfg, const std::string& resume = {});

struct GenerateRequest {
    std::string first_frame;       // video container; frame 0 is used
    std::optional<int> data_index;  // alternatively a dataset clip
    std::vector<int> caption;
    bool png = false;
    bool preview = false;
};

Video cmd_generate(const RunConfig& cfg, const GenerateRequest& req);

struct EvalReport {
    std::vector<std::string> videos;
    std::vector<double> delta_edge_fd;  // per video
    std::vector<double> mean_fd_curve;
    std::vector<double> step_fvd;  // chunk i = 2.. at index i - 2
    std::vector<MetricRecord> records;
};

EvalReport cmd_eval(const RunConfig& cfg, const std::string& video_dir);

BenchReport cmd_bench(const RunConfig& cfg);

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Oracle-equivalence, causality and duplication-invariance suites on a
// random tiny model. corrupt_mask runs the causality suite on a model with
// bidirectional temporal attention.
std::vector<SuiteResult> cmd_selftest(const RunConfig& cfg, bool corrupt_mask);

// Parses argv and dispatches; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace causalvid::cli
