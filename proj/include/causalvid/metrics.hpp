#pragma once

#include "causalvid/common.hpp"
#include "causalvid/video.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace causalvid {

// Mean absolute difference between consecutive frames after mapping
// [-1, 1] to [0, 1]. Entry f compares frames f and f + 1.
std::vector<double> frame_differencing(const Video& video);

// Curve indices of the frame pairs that straddle two consecutive chunks
// when `offset` conditioning frames are followed by chunks of n frames.
std::vector<int> junction_indices(int curve_len, int n, int offset);

// Mean FD at chunk junctions minus mean FD over the remaining pairs
// (indices below `offset` are ignored). With per_chunk, the non-junction
// mean is the average of per-chunk means instead of the pooled mean.
double delta_edge_fd(const std::vector<double>& curve, int n, int offset, bool per_chunk = false);

// Average-pools a chunk to time_bins x grid x grid x C and applies a frozen
// random projection to `dim` features (no bias).
class FeatureExtractor {
public:
    FeatureExtractor(int chunk_len, int height, int width, int channels, std::uint64_t seed, int dim = 64,
                     int time_bins = 2, int grid = 4);

    int chunk_len() const { return chunk_len_; }
    int dim() const { return static_cast<int>(projection_.rows()); }

    Vec operator()(const Video& chunk) const;
    Vec pooled(const Video& chunk) const;

private:
    int chunk_len_, height_, width_, channels_, time_bins_, grid_;
    Mat projection_;  // dim x pooled size
};

struct FrechetStats {
    Vec mean;
    Mat cov;
    int count = 0;
};

// Sample mean and unbiased covariance of the rows of `samples`.
FrechetStats frechet_stats(const Mat& samples);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), clamped at zero.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

// Fréchet distance of chunk i (i = 2..C, 1-based) against chunk 1 over a
// population of videos. Entry i - 2 of the result holds chunk i.
std::vector<double> step_fvd(const std::vector<Video>& videos, int n, int offset, std::uint64_t extractor_seed);

struct MetricRecord {
    std::string name;
    int chunk = 0;  // 0 when the metric is not per chunk
    double value = 0.0;
};

void write_metric_report(std::ostream& out, const std::vector<MetricRecord>& records);
// Two columns: frame id (of the later frame) and FD value.
void write_fd_table(std::ostream& out, const std::vector<double>& curve);

}  // namespace causalvid
