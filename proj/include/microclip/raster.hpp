#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "microclip/common.hpp"

namespace microclip::raster {

struct Color {
    uint8_t r = 0, g = 0, b = 0;
};

// 8-bit RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // width*height*3

    Image() = default;
    Image(int w, int h, Color fill = {0, 0, 0});

    uint8_t* px(int x, int y) { return pixels.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const uint8_t* px(int x, int y) const {
        return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
    bool operator==(const Image& o) const {
        return width == o.width && height == o.height && pixels == o.pixels;
    }
};

enum class BoxSource { GroundTruth, Heuristic, Sidecar };
std::string box_source_name(BoxSource s);
BoxSource box_source_from_name(const std::string& s);

struct TextRegionBox {
    int x = 0, y = 0;
    int w = 0, h = 0;
    std::string text;  // known for synthetic overlays, empty for detections
    BoxSource source = BoxSource::GroundTruth;
};

// ---- embedded 5x7 fixed-width bitmap font (A-Z a-z 0-9 space hyphen) ----
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphAdvance = 6;  // 5 px glyph + 1 px gap

bool font_has_glyph(char c);
int glyph_set_bits(char c);  // number of lit pixels in the glyph bitmap
int word_pixel_width(const std::string& word, int scale);
int word_pixel_height(int scale);

// Stamps `word` with its top-left corner at (x, y). Only lit glyph bits are
// painted. Returns the exact covering box with the word recorded.
TextRegionBox render_word(Image& image, const std::string& word, int x, int y, int scale,
                          Color color);

// Corner-aligned bilinear resampling to target_side x target_side,
// rounded half-to-even per channel.
Image resize_bilinear(const Image& image, int target_side);

// Normalized 1-d Gaussian kernel of size 2*radius+1 with sigma = radius/3.
std::vector<double> gaussian_kernel(int radius);

// Replaces the pixels inside `box` with Gaussian-filtered values. Reads may
// extend outside the box; the image border is handled by symmetric
// reflection. Intermediate arithmetic is double; final values are rounded
// half-to-even.
void gaussian_blur_region(Image& image, const TextRegionBox& box, int radius);

// ---- shape primitives for the synthetic corpus ----
enum class ShapeKind { Ball, Box, Tri, Ring, Star };
inline constexpr int kShapeKindCount = 5;
std::string shape_kind_name(ShapeKind k);

void draw_shape(Image& image, ShapeKind kind, double cx, double cy, double radius,
                double rotation, Color color);

// ---- PNG container (8-bit RGB, no interlacing) ----
std::vector<uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<uint8_t>& bytes);
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

}  // namespace microclip::raster
