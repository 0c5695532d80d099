#pragma once

#include "causalvid/common.hpp"

#include <span>
#include <vector>

namespace causalvid {

// N frames of H x W x C latents, stored frame-major then row, column,
// channel. Values are expected in [-1, 1].
struct Video {
    int frames = 0;
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Video() = default;
    Video(int n, int h, int w, int c, float fill = 0.0f)
        : frames(n), height(h), width(w), channels(c),
          data(static_cast<size_t>(n) * h * w * c, fill) {}

    size_t frame_size() const { return static_cast<size_t>(height) * width * channels; }

    std::span<float> frame(int f) { return {data.data() + f * frame_size(), frame_size()}; }
    std::span<const float> frame(int f) const { return {data.data() + f * frame_size(), frame_size()}; }

    float& at(int f, int y, int x, int c) {
        return data[((static_cast<size_t>(f) * height + y) * width + x) * channels + c];
    }
    float at(int f, int y, int x, int c) const {
        return data[((static_cast<size_t>(f) * height + y) * width + x) * channels + c];
    }

    bool same_shape(const Video& o) const {
        return frames == o.frames && height == o.height && width == o.width && channels == o.channels;
    }

    bool operator==(const Video& o) const = default;
};

// Frames [first, first + count) as an N x (H*W*C) matrix.
Mat frames_to_mat(const Video& v, int first, int count);
inline Mat frames_to_mat(const Video& v) { return frames_to_mat(v, 0, v.frames); }

Video mat_to_video(const Mat& m, int h, int w, int c);

// Appends the rows of m as new frames.
void append_frames(Video& v, const Mat& m);

Video slice_frames(const Video& v, int first, int count);

}  // namespace causalvid
