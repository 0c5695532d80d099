#pragma once

#include "causalvid/video.hpp"

#include <filesystem>
#include <vector>

namespace causalvid {

// 8-bit RGB (or grey for single-channel video) PNG of one frame; values in
// [-1, 1] map to [0, 255].
void write_png(const std::filesystem::path& path, const Video& video, int frame);

// One PNG per frame named frame_00000.png, ... inside dir.
std::vector<std::filesystem::path> export_png_frames(const std::filesystem::path& dir, const Video& video);

// Animated preview as a YUV4MPEG2 (4:4:4) stream playable by common players.
void write_y4m(const std::filesystem::path& path, const Video& video, int fps = 8);

}  // namespace causalvid
