#include "causalvid/data.hpp"

#include "causalvid/byte_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace causalvid {

namespace {

constexpr std::array<std::array<float, 3>, kNumColors> kPalette = {{
    {1.0f, -0.6f, -0.6f},  // red
    {-0.6f, 1.0f, -0.6f},  // green
    {-0.6f, -0.6f, 1.0f},  // blue
    {1.0f, 1.0f, -0.6f},   // yellow
    {-0.6f, 1.0f, 1.0f},   // cyan
    {1.0f, -0.6f, 1.0f},   // magenta
}};

constexpr std::array<float, 4> kBackgrounds = {-1.0f, -0.9f, -0.8f, -0.7f};

double reflect(double p, double lo, double hi) {
    const double span = hi - lo;
    if (span <= 0.0) {
        return lo;
    }
    const double period = 2.0 * span;
    double u = std::fmod(p - lo, period);
    if (u < 0.0) {
        u += period;
    }
    return lo + (u > span ? period - u : u);
}

}  // namespace

int direction_bin(double vx, double vy) {
    if (vx == 0.0 && vy == 0.0) {
        return 8;
    }
    const double angle = std::atan2(vy, vx);
    const double pi = std::acos(-1.0);
    int bin = static_cast<int>(std::lround(angle / (pi / 4.0)));
    return ((bin % 8) + 8) % 8;
}

CaptionTokens encode_caption(const CaptionAttrs& a) {
    require(static_cast<int>(a.shape) >= 0 && static_cast<int>(a.shape) < kNumShapes, "caption: bad shape");
    require(a.color >= 0 && a.color < kNumColors, "caption: bad color");
    require(a.direction >= 0 && a.direction < kNumDirections, "caption: bad direction");
    return {kShapeTokenBase + static_cast<int>(a.shape), kColorTokenBase + a.color, kDirectionTokenBase + a.direction};
}

CaptionAttrs decode_caption(const CaptionTokens& t) {
    require(t.size() == static_cast<size_t>(kCaptionLen), "caption: wrong token count");
    const int shape = t[0] - kShapeTokenBase;
    const int color = t[1] - kColorTokenBase;
    const int dir = t[2] - kDirectionTokenBase;
    require(shape >= 0 && shape < kNumShapes && color >= 0 && color < kNumColors && dir >= 0 && dir < kNumDirections,
            "caption: token outside its attribute range");
    return {static_cast<ShapeKind>(shape), color, dir};
}

CaptionTokens null_caption(int len) {
    return CaptionTokens(static_cast<size_t>(len), kNullToken);
}

std::pair<double, double> scene_position(const SceneSpec& spec, int frame) {
    const double lo = spec.size;
    const double hi_x = spec.width - spec.size;
    const double hi_y = spec.height - spec.size;
    return {reflect(spec.x + spec.vx * frame, lo, hi_x), reflect(spec.y + spec.vy * frame, lo, hi_y)};
}

void render_frame(const SceneSpec& spec, int frame, std::uint64_t seed, std::span<float> out) {
    require(out.size() == static_cast<size_t>(spec.height) * spec.width * spec.channels, "render_frame: buffer size");
    const float bg = kBackgrounds[seed % kBackgrounds.size()];
    const auto [cx, cy] = scene_position(spec, frame);
    const auto& color = kPalette[static_cast<size_t>(spec.color)];
    const double r2 = static_cast<double>(spec.size) * spec.size;
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const double px = x + 0.5 - cx;
            const double py = y + 0.5 - cy;
            bool inside = false;
            if (spec.shape == ShapeKind::kSquare) {
                inside = px >= -spec.size && px < spec.size && py >= -spec.size && py < spec.size;
            } else {
                inside = px * px + py * py < r2;
            }
            for (int c = 0; c < spec.channels; ++c) {
                out[(static_cast<size_t>(y) * spec.width + x) * spec.channels + c] = inside ? color[c % 3] : bg;
            }
        }
    }
}

SynthVideo synth_video(const SceneSpec& spec, std::uint64_t seed) {
    require(spec.frames >= 1 && spec.height >= 1 && spec.width >= 1 && spec.channels >= 1,
            "synth_video: non-positive dimensions");
    require(spec.color >= 0 && spec.color < kNumColors, "synth_video: color index out of range");
    if (spec.size < 1 || 2 * spec.size > std::min(spec.height, spec.width)) {
        throw ContractError("synth_video: shape of size " + std::to_string(spec.size) + " does not fit the " +
                            std::to_string(spec.height) + "x" + std::to_string(spec.width) + " canvas");
    }
    SynthVideo out;
    out.video = Video(spec.frames, spec.height, spec.width, spec.channels);
    for (int f = 0; f < spec.frames; ++f) {
        render_frame(spec, f, seed, out.video.frame(f));
    }
    out.caption = encode_caption({spec.shape, spec.color, direction_bin(spec.vx, spec.vy)});
    return out;
}

SceneSpec random_scene(std::mt19937_64& rng, int height, int width, int channels, int frames) {
    SceneSpec s;
    s.height = height;
    s.width = width;
    s.channels = channels;
    s.frames = frames;
    s.shape = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, kNumShapes - 1)(rng));
    s.color = std::uniform_int_distribution<int>(0, kNumColors - 1)(rng);
    const int max_size = std::max(1, std::min(height, width) / 4);
    s.size = std::uniform_int_distribution<int>(std::min(2, max_size), max_size)(rng);
    s.x = std::uniform_int_distribution<int>(s.size, width - s.size)(rng);
    s.y = std::uniform_int_distribution<int>(s.size, height - s.size)(rng);
    std::uniform_int_distribution<int> vel(-1, 1);
    s.vx = vel(rng);
    s.vy = vel(rng);
    return s;
}

std::optional<Video> sample_clip(const Video& video, int N, int interval, std::mt19937_64& rng) {
    require(N >= 1 && interval >= 1, "sample_clip: N and interval must be positive");
    const long need = static_cast<long>(N) * interval;
    if (video.frames < need) {
        return std::nullopt;
    }
    const int start = std::uniform_int_distribution<int>(0, static_cast<int>(video.frames - need))(rng);
    Video clip(N, video.height, video.width, video.channels);
    for (int i = 0; i < N; ++i) {
        const auto src = video.frame(start + i * interval);
        std::copy(src.begin(), src.end(), clip.frame(i).begin());
    }
    return clip;
}

void write_video(const std::filesystem::path& path, const Video& video) {
    require(video.data.size() == static_cast<size_t>(video.frames) * video.frame_size(), "write_video: data size");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open video for writing: " + path.string());
    }
    out.write("CVID", 4);
    write_u32(out, kVideoVersion);
    write_u32(out, static_cast<std::uint32_t>(video.frames));
    write_u32(out, static_cast<std::uint32_t>(video.height));
    write_u32(out, static_cast<std::uint32_t>(video.width));
    write_u32(out, static_cast<std::uint32_t>(video.channels));
    write_u32(out, 0);
    write_f32_array(out, video.data);
    if (!out) {
        throw IoError("failed while writing video " + path.string());
    }
}

Video read_video(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open video: " + path.string());
    }
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "CVID") {
        throw IoError("not a video container (bad magic): " + path.string());
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVideoVersion) {
        throw IoError("unsupported video container version " + std::to_string(version));
    }
    const std::uint32_t n = read_u32(in);
    const std::uint32_t h = read_u32(in);
    const std::uint32_t w = read_u32(in);
    const std::uint32_t c = read_u32(in);
    const std::uint32_t encoding = read_u32(in);
    if (!in) {
        throw IoError("truncated video header: " + path.string());
    }
    if (encoding != 0) {
        throw IoError("unsupported value encoding " + std::to_string(encoding));
    }
    Video v(static_cast<int>(n), static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    if (!read_f32_array(in, v.data)) {
        throw IoError("truncated video payload: " + path.string());
    }
    return v;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open manifest for writing: " + path.string());
    }
    for (const auto& r : records) {
        out << r.path << '\t';
        for (size_t i = 0; i < r.caption.size(); ++i) {
            out << (i ? "," : "") << r.caption[i];
        }
        out << '\t' << r.seed << '\n';
    }
    if (!out) {
        throw IoError("failed while writing manifest " + path.string());
    }
}

std::vector<ClipRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest: " + path.string());
    }
    std::vector<ClipRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        ClipRecord r;
        std::string caption, seed;
        if (!std::getline(ls, r.path, '\t') || !std::getline(ls, caption, '\t') || !std::getline(ls, seed)) {
            throw IoError("malformed manifest line: " + line);
        }
        std::istringstream cs(caption);
        std::string tok;
        while (std::getline(cs, tok, ',')) {
            r.caption.push_back(std::stoi(tok));
        }
        r.seed = std::stoull(seed);
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<ClipRecord> make_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
    require_config(spec.count >= 1, "dataset count must be positive");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    }
    std::mt19937_64 rng(spec.seed);
    std::vector<ClipRecord> records;
    for (int i = 0; i < spec.count; ++i) {
        const std::uint64_t clip_seed = rng();
        std::mt19937_64 clip_rng(clip_seed);
        const SceneSpec scene = random_scene(clip_rng, spec.height, spec.width, spec.channels, spec.frames);
        const SynthVideo sv = synth_video(scene, clip_seed);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.cvid", i);
        write_video(dir / name, sv.video);
        records.push_back({name, sv.caption, clip_seed});
    }
    write_manifest(dir / "manifest.tsv", records);
    return records;
}

std::vector<int> epoch_order(int count, std::uint64_t epoch_seed) {
    std::vector<int> order(static_cast<size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

}  // namespace causalvid
