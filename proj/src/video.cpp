#include "causalvid/video.hpp"

#include <algorithm>
#include <string>

namespace causalvid {

Mat frames_to_mat(const Video& v, int first, int count) {
    require(first >= 0 && count >= 0 && first + count <= v.frames,
            "frame range [" + std::to_string(first) + ", " + std::to_string(first + count) +
                ") outside video of " + std::to_string(v.frames) + " frames");
    const auto fs = static_cast<Eigen::Index>(v.frame_size());
    Mat m(count, fs);
    for (int f = 0; f < count; ++f) {
        const auto src = v.frame(first + f);
        for (Eigen::Index i = 0; i < fs; ++i) {
            m(f, i) = src[static_cast<size_t>(i)];
        }
    }
    return m;
}

Video mat_to_video(const Mat& m, int h, int w, int c) {
    require(m.cols() == static_cast<Eigen::Index>(h) * w * c, "mat_to_video: column count does not match frame shape");
    Video v(static_cast<int>(m.rows()), h, w, c);
    for (Eigen::Index f = 0; f < m.rows(); ++f) {
        auto dst = v.frame(static_cast<int>(f));
        for (Eigen::Index i = 0; i < m.cols(); ++i) {
            dst[static_cast<size_t>(i)] = static_cast<float>(m(f, i));
        }
    }
    return v;
}

void append_frames(Video& v, const Mat& m) {
    require(m.cols() == static_cast<Eigen::Index>(v.frame_size()), "append_frames: frame size mismatch");
    const size_t old = v.data.size();
    v.data.resize(old + static_cast<size_t>(m.size()));
    for (Eigen::Index f = 0; f < m.rows(); ++f) {
        for (Eigen::Index i = 0; i < m.cols(); ++i) {
            v.data[old + static_cast<size_t>(f * m.cols() + i)] = static_cast<float>(m(f, i));
        }
    }
    v.frames += static_cast<int>(m.rows());
}

Video slice_frames(const Video& v, int first, int count) {
    require(first >= 0 && count >= 0 && first + count <= v.frames, "slice_frames: range outside video");
    Video out(count, v.height, v.width, v.channels);
    std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(first * v.frame_size()),
                static_cast<std::ptrdiff_t>(count * v.frame_size()), out.data.begin());
    return out;
}

}  // namespace causalvid
