#pragma once

#include "causalvid/video.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace causalvid {

enum class ShapeKind { kSquare = 0, kCircle = 1 };

inline constexpr int kNumShapes = 2;
inline constexpr int kNumColors = 6;
// Eight compass directions plus "static".
inline constexpr int kNumDirections = 9;

// Caption vocabulary: 0 is the null caption, then shape, color and
// direction tokens in disjoint ranges.
inline constexpr int kNullToken = 0;
inline constexpr int kShapeTokenBase = 1;
inline constexpr int kColorTokenBase = kShapeTokenBase + kNumShapes;
inline constexpr int kDirectionTokenBase = kColorTokenBase + kNumColors;
inline constexpr int kCaptionVocabUsed = kDirectionTokenBase + kNumDirections;
inline constexpr int kCaptionLen = 3;

// A single shape moving with constant velocity and elastic wall bounces.
struct SceneSpec {
    ShapeKind shape = ShapeKind::kSquare;
    int color = 0;
    double x = 8.0;  // centre, pixels
    double y = 8.0;
    double vx = 0.0;  // pixels per frame
    double vy = 0.0;
    int size = 3;  // half-edge for squares, radius for circles
    int height = 16;
    int width = 16;
    int channels = 3;
    int frames = 64;
};

struct CaptionAttrs {
    ShapeKind shape = ShapeKind::kSquare;
    int color = 0;
    int direction = 8;

    bool operator==(const CaptionAttrs&) const = default;
};

using CaptionTokens = std::vector<int>;

int direction_bin(double vx, double vy);
CaptionTokens encode_caption(const CaptionAttrs& attrs);
CaptionAttrs decode_caption(const CaptionTokens& tokens);
CaptionTokens null_caption(int len = kCaptionLen);

// Shape centre at frame f after elastic reflection off the canvas walls.
std::pair<double, double> scene_position(const SceneSpec& spec, int frame);

// Renders frame f; a pure function of (spec, f, seed).
void render_frame(const SceneSpec& spec, int frame, std::uint64_t seed, std::span<float> out);

struct SynthVideo {
    Video video;
    CaptionTokens caption;
};

// The seed selects the background level only; motion is fixed by the spec.
SynthVideo synth_video(const SceneSpec& spec, std::uint64_t seed);

SceneSpec random_scene(std::mt19937_64& rng, int height, int width, int channels, int frames);

// Every `interval`-th frame from a uniformly random start. Returns nullopt
// when the source is shorter than N * interval frames.
std::optional<Video> sample_clip(const Video& video, int N, int interval, std::mt19937_64& rng);

// Container: "CVID" | u32 version | u32 N, H, W, C | u32 encoding (0 =
// float32 LE) | N*H*W*C float32 little-endian values.
inline constexpr std::uint32_t kVideoVersion = 1;
inline constexpr size_t kVideoHeaderBytes = 28;

void write_video(const std::filesystem::path& path, const Video& video);
Video read_video(const std::filesystem::path& path);

struct ClipRecord {
    std::string path;  // relative to the manifest directory
    CaptionTokens caption;
    std::uint64_t seed = 0;

    bool operator==(const ClipRecord&) const = default;
};

// Tab-separated: path, comma-separated caption ids, seed.
void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records);
std::vector<ClipRecord> read_manifest(const std::filesystem::path& path);

struct DatasetSpec {
    int count = 200;
    int frames = 64;
    int height = 16;
    int width = 16;
    int channels = 3;
    std::uint64_t seed = 0;
};

// Writes `count` synthetic clips plus manifest.tsv into dir.
std::vector<ClipRecord> make_dataset(const std::filesystem::path& dir, const DatasetSpec& spec);

// Deterministic permutation of [0, count) for an epoch.
std::vector<int> epoch_order(int count, std::uint64_t epoch_seed);

}  // namespace causalvid
