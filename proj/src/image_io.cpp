#include "causalvid/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace causalvid {

namespace {

std::uint8_t to_byte(float v) {
    const double x = std::clamp((static_cast<double>(v) + 1.0) * 0.5, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(x * 255.0));
}

// RGB bytes of one pixel; channels beyond the first three are ignored and
// single-channel video is replicated.
void pixel_rgb(const Video& v, int f, int y, int x, std::uint8_t rgb[3]) {
    for (int c = 0; c < 3; ++c) {
        rgb[c] = to_byte(v.at(f, y, x, v.channels >= 3 ? c : 0));
    }
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

namespace {

// Only plain arguments live across setjmp here.
bool encode_png(std::FILE* fp, png_uint_32 width, png_uint_32 height, int color_type, const std::uint8_t* rows,
                size_t stride) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_write_row(png, rows + y * stride);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Video& video, int frame) {
    require(frame >= 0 && frame < video.frames, "write_png: frame index out of range");
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) {
        throw IoError("cannot open PNG for writing: " + path.string());
    }
    const bool grey = video.channels < 3;
    const int bpp = grey ? 1 : 3;
    std::vector<std::uint8_t> rows(static_cast<size_t>(video.height) * video.width * bpp);
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            std::uint8_t rgb[3];
            pixel_rgb(video, frame, y, x, rgb);
            std::copy(rgb, rgb + bpp, rows.begin() + (static_cast<size_t>(y) * video.width + x) * bpp);
        }
    }
    if (!encode_png(fp.get(), static_cast<png_uint_32>(video.width), static_cast<png_uint_32>(video.height),
                    grey ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, rows.data(),
                    static_cast<size_t>(video.width) * bpp)) {
        throw IoError("failed while writing PNG " + path.string());
    }
}

std::vector<std::filesystem::path> export_png_frames(const std::filesystem::path& dir, const Video& video) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
    std::vector<std::filesystem::path> out;
    for (int f = 0; f < video.frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05d.png", f);
        out.push_back(dir / name);
        write_png(out.back(), video, f);
    }
    return out;
}

void write_y4m(const std::filesystem::path& path, const Video& video, int fps) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open preview for writing: " + path.string());
    }
    out << "YUV4MPEG2 W" << video.width << " H" << video.height << " F" << fps << ":1 Ip A1:1 C444\n";
    const size_t plane = static_cast<size_t>(video.width) * video.height;
    std::vector<std::uint8_t> yuv(3 * plane);
    for (int f = 0; f < video.frames; ++f) {
        for (int y = 0; y < video.height; ++y) {
            for (int x = 0; x < video.width; ++x) {
                std::uint8_t rgb[3];
                pixel_rgb(video, f, y, x, rgb);
                const double r = rgb[0], g = rgb[1], b = rgb[2];
                const size_t i = static_cast<size_t>(y) * video.width + x;
                // BT.601 studio range.
                yuv[i] = static_cast<std::uint8_t>(std::lround(16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0));
                yuv[plane + i] =
                    static_cast<std::uint8_t>(std::lround(128.0 + (-37.797 * r - 74.203 * g + 112.0 * b) / 255.0));
                yuv[2 * plane + i] =
                    static_cast<std::uint8_t>(std::lround(128.0 + (112.0 * r - 93.786 * g - 18.214 * b) / 255.0));
            }
        }
        out << "FRAME\n";
        out.write(reinterpret_cast<const char*>(yuv.data()), static_cast<std::streamsize>(yuv.size()));
    }
    if (!out) {
        throw IoError("failed while writing preview " + path.string());
    }
}

}  // namespace causalvid
