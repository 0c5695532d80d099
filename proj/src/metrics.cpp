#include "causalvid/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>

namespace causalvid {

std::vector<double> frame_differencing(const Video& video) {
    require(video.frames >= 2, "frame_differencing: at least two frames required");
    const size_t fs = video.frame_size();
    std::vector<double> curve(static_cast<size_t>(video.frames - 1));
    for (int f = 0; f + 1 < video.frames; ++f) {
        const auto a = video.frame(f);
        const auto b = video.frame(f + 1);
        double sum = 0.0;
        for (size_t i = 0; i < fs; ++i) {
            sum += std::abs(0.5 * (static_cast<double>(b[i]) + 1.0) - 0.5 * (static_cast<double>(a[i]) + 1.0));
        }
        curve[static_cast<size_t>(f)] = sum / static_cast<double>(fs);
    }
    return curve;
}

std::vector<int> junction_indices(int curve_len, int n, int offset) {
    require(n >= 1 && offset >= 0, "junction_indices: invalid chunk geometry");
    std::vector<int> out;
    for (int c = 1;; ++c) {
        const int idx = offset + c * n - 1;
        if (idx >= curve_len) {
            break;
        }
        out.push_back(idx);
    }
    return out;
}

double delta_edge_fd(const std::vector<double>& curve, int n, int offset, bool per_chunk) {
    const int len = static_cast<int>(curve.size());
    const std::vector<int> junctions = junction_indices(len, n, offset);
    if (junctions.empty()) {
        throw ContractError("delta_edge_fd: no chunk junction inside the curve (need at least two chunks)");
    }
    // Sums run over differences from a reference entry so a flat curve
    // gives exactly zero.
    const double ref = curve[static_cast<size_t>(junctions.front())];
    std::vector<bool> is_junction(curve.size(), false);
    double junction_sum = 0.0;
    for (int j : junctions) {
        is_junction[static_cast<size_t>(j)] = true;
        junction_sum += curve[static_cast<size_t>(j)] - ref;
    }
    const double junction_mean = junction_sum / static_cast<double>(junctions.size());

    double rest_mean = 0.0;
    if (per_chunk) {
        double total = 0.0;
        int chunks = 0;
        for (int start = offset; start < len; start += n) {
            double sum = 0.0;
            int count = 0;
            for (int i = start; i < std::min(start + n, len); ++i) {
                if (!is_junction[static_cast<size_t>(i)]) {
                    sum += curve[static_cast<size_t>(i)] - ref;
                    ++count;
                }
            }
            if (count > 0) {
                total += sum / count;
                ++chunks;
            }
        }
        require(chunks > 0, "delta_edge_fd: no non-junction frame pairs");
        rest_mean = total / chunks;
    } else {
        double sum = 0.0;
        int count = 0;
        for (int i = offset; i < len; ++i) {
            if (!is_junction[static_cast<size_t>(i)]) {
                sum += curve[static_cast<size_t>(i)] - ref;
                ++count;
            }
        }
        require(count > 0, "delta_edge_fd: no non-junction frame pairs");
        rest_mean = sum / count;
    }
    return junction_mean - rest_mean;
}

FeatureExtractor::FeatureExtractor(int chunk_len, int height, int width, int channels, std::uint64_t seed, int dim,
                                   int time_bins, int grid)
    : chunk_len_(chunk_len), height_(height), width_(width), channels_(channels),
      time_bins_(std::min(time_bins, chunk_len)), grid_(std::min({grid, height, width})) {
    require(chunk_len >= 1 && height >= 1 && width >= 1 && channels >= 1 && dim >= 1 && time_bins >= 1 && grid >= 1,
            "FeatureExtractor: invalid geometry");
    const int in_dim = time_bins_ * grid_ * grid_ * channels_;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    projection_.resize(dim, in_dim);
    for (Eigen::Index i = 0; i < projection_.size(); ++i) {
        projection_.data()[i] = normal(rng);
    }
}

Vec FeatureExtractor::pooled(const Video& chunk) const {
    if (chunk.frames != chunk_len_) {
        throw ContractError("extract_features: expected a chunk of " + std::to_string(chunk_len_) + " frames, got " +
                            std::to_string(chunk.frames));
    }
    require(chunk.height == height_ && chunk.width == width_ && chunk.channels == channels_,
            "extract_features: frame shape mismatch");
    Vec pooled = Vec::Zero(static_cast<Eigen::Index>(time_bins_) * grid_ * grid_ * channels_);
    Vec counts = Vec::Zero(pooled.size());
    for (int f = 0; f < chunk_len_; ++f) {
        const int tb = f * time_bins_ / chunk_len_;
        for (int y = 0; y < height_; ++y) {
            const int gy = y * grid_ / height_;
            for (int x = 0; x < width_; ++x) {
                const int gx = x * grid_ / width_;
                for (int c = 0; c < channels_; ++c) {
                    const Eigen::Index idx = ((static_cast<Eigen::Index>(tb) * grid_ + gy) * grid_ + gx) * channels_ + c;
                    pooled[idx] += chunk.at(f, y, x, c);
                    counts[idx] += 1.0;
                }
            }
        }
    }
    return pooled.cwiseQuotient(counts);
}

Vec FeatureExtractor::operator()(const Video& chunk) const {
    return projection_ * pooled(chunk);
}

FrechetStats frechet_stats(const Mat& samples) {
    require(samples.rows() >= 2, "frechet_stats: at least two samples required");
    FrechetStats st;
    st.count = static_cast<int>(samples.rows());
    st.mean = samples.colwise().mean().transpose();
    const Mat centered = samples.rowwise() - st.mean.transpose();
    st.cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
    return st;
}

namespace {

Mat psd_sqrt(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Vec vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
    require(a.mean.size() == b.mean.size() && a.cov.rows() == a.mean.size() && b.cov.rows() == b.mean.size(),
            "frechet_distance: dimension mismatch");
    require(a.count >= 2 && b.count >= 2, "frechet_distance: each side needs at least two samples");
    const Mat s1h = psd_sqrt(a.cov);
    const Mat inner = s1h * b.cov * s1h;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d);
}

std::vector<double> step_fvd(const std::vector<Video>& videos, int n, int offset, std::uint64_t extractor_seed) {
    if (videos.size() < 2) {
        throw ContractError("step_fvd: a population of at least two videos is required");
    }
    const Video& first = videos.front();
    for (const auto& v : videos) {
        require(v.same_shape(first), "step_fvd: videos in the population differ in shape");
    }
    const int chunks = (first.frames - offset) / n;
    require(n >= 1 && offset >= 0 && chunks >= 2, "step_fvd: at least two chunks per video required");
    const FeatureExtractor fx(n, first.height, first.width, first.channels, extractor_seed);
    std::vector<FrechetStats> stats;
    for (int c = 0; c < chunks; ++c) {
        Mat feats(static_cast<Eigen::Index>(videos.size()), fx.dim());
        for (size_t i = 0; i < videos.size(); ++i) {
            feats.row(static_cast<Eigen::Index>(i)) = fx(slice_frames(videos[i], offset + c * n, n)).transpose();
        }
        stats.push_back(frechet_stats(feats));
    }
    std::vector<double> out;
    for (int c = 1; c < chunks; ++c) {
        out.push_back(frechet_distance(stats[static_cast<size_t>(c)], stats[0]));
    }
    return out;
}

void write_metric_report(std::ostream& out, const std::vector<MetricRecord>& records) {
    out << "metric\tchunk\tvalue\n";
    for (const auto& r : records) {
        out << r.name << '\t' << r.chunk << '\t' << std::setprecision(10) << r.value << '\n';
    }
}

void write_fd_table(std::ostream& out, const std::vector<double>& curve) {
    out << "frame\tfd\n";
    for (size_t i = 0; i < curve.size(); ++i) {
        out << i + 1 << '\t' << std::setprecision(10) << curve[i] << '\n';
    }
}

}  // namespace causalvid
