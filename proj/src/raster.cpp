#include "microclip/raster.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

namespace microclip::raster {

Image::Image(int w, int h, Color fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw DataError("image dimensions must be positive");
    pixels.resize(static_cast<size_t>(w) * h * 3);
    for (size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill.r;
        pixels[i + 1] = fill.g;
        pixels[i + 2] = fill.b;
    }
}

std::string box_source_name(BoxSource s) {
    switch (s) {
        case BoxSource::GroundTruth: return "ground-truth";
        case BoxSource::Heuristic: return "heuristic";
        case BoxSource::Sidecar: return "sidecar";
    }
    throw DataError("unknown box source");
}

BoxSource box_source_from_name(const std::string& s) {
    if (s == "ground-truth") return BoxSource::GroundTruth;
    if (s == "heuristic") return BoxSource::Heuristic;
    if (s == "sidecar") return BoxSource::Sidecar;
    throw DataError("unknown box source name: " + s);
}

// ---------------------------------------------------------------------------
// font: 7 rows of 5 bits per glyph, msb = leftmost column
// ---------------------------------------------------------------------------

namespace {

struct Glyph {
    std::array<uint8_t, 7> rows;
};

const std::map<char, Glyph>& font_table() {
    static const std::map<char, Glyph> table = {
        {'A', {{0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}}},
        {'B', {{0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110}}},
        {'C', {{0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110}}},
        {'D', {{0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110}}},
        {'E', {{0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111}}},
        {'F', {{0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}}},
        {'G', {{0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111}}},
        {'H', {{0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}}},
        {'I', {{0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}}},
        {'J', {{0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100}}},
        {'K', {{0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001}}},
        {'L', {{0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111}}},
        {'M', {{0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001}}},
        {'N', {{0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001}}},
        {'O', {{0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}}},
        {'P', {{0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}}},
        {'Q', {{0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101}}},
        {'R', {{0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001}}},
        {'S', {{0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110}}},
        {'T', {{0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}}},
        {'U', {{0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}}},
        {'V', {{0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}}},
        {'W', {{0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}}},
        {'X', {{0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001}}},
        {'Y', {{0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100}}},
        {'Z', {{0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111}}},
        {'a', {{0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111}}},
        {'b', {{0b10000, 0b10000, 0b11110, 0b10001, 0b10001, 0b10001, 0b11110}}},
        {'c', {{0b00000, 0b00000, 0b01110, 0b10001, 0b10000, 0b10001, 0b01110}}},
        {'d', {{0b00001, 0b00001, 0b01111, 0b10001, 0b10001, 0b10001, 0b01111}}},
        {'e', {{0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110}}},
        {'f', {{0b00110, 0b01001, 0b01000, 0b11100, 0b01000, 0b01000, 0b01000}}},
        {'g', {{0b00000, 0b01111, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110}}},
        {'h', {{0b10000, 0b10000, 0b11110, 0b10001, 0b10001, 0b10001, 0b10001}}},
        {'i', {{0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110}}},
        {'j', {{0b00010, 0b00000, 0b00110, 0b00010, 0b00010, 0b10010, 0b01100}}},
        {'k', {{0b10000, 0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010}}},
        {'l', {{0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}}},
        {'m', {{0b00000, 0b00000, 0b11010, 0b10101, 0b10101, 0b10101, 0b10101}}},
        {'n', {{0b00000, 0b00000, 0b11110, 0b10001, 0b10001, 0b10001, 0b10001}}},
        {'o', {{0b00000, 0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110}}},
        {'p', {{0b00000, 0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000}}},
        {'q', {{0b00000, 0b00000, 0b01111, 0b10001, 0b01111, 0b00001, 0b00001}}},
        {'r', {{0b00000, 0b00000, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000}}},
        {'s', {{0b00000, 0b00000, 0b01111, 0b10000, 0b01110, 0b00001, 0b11110}}},
        {'t', {{0b01000, 0b01000, 0b11100, 0b01000, 0b01000, 0b01001, 0b00110}}},
        {'u', {{0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101}}},
        {'v', {{0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}}},
        {'w', {{0b00000, 0b00000, 0b10001, 0b10001, 0b10101, 0b10101, 0b01010}}},
        {'x', {{0b00000, 0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001}}},
        {'y', {{0b00000, 0b00000, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110}}},
        {'z', {{0b00000, 0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111}}},
        {'0', {{0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}}},
        {'1', {{0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}}},
        {'2', {{0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}}},
        {'3', {{0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}}},
        {'4', {{0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}}},
        {'5', {{0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}}},
        {'6', {{0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}}},
        {'7', {{0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}}},
        {'8', {{0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}}},
        {'9', {{0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}}},
        {' ', {{0, 0, 0, 0, 0, 0, 0}}},
        {'-', {{0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000}}},
    };
    return table;
}

const Glyph& glyph_for(char c) {
    auto it = font_table().find(c);
    if (it == font_table().end())
        throw DataError(std::string("no glyph for character '") + c + "'");
    return it->second;
}

}  // namespace

bool font_has_glyph(char c) { return font_table().count(c) > 0; }

int glyph_set_bits(char c) {
    const Glyph& g = glyph_for(c);
    int n = 0;
    for (uint8_t row : g.rows) n += __builtin_popcount(row);
    return n;
}

int word_pixel_width(const std::string& word, int scale) {
    if (word.empty()) throw DataError("cannot measure an empty word");
    return static_cast<int>(word.size()) * kGlyphAdvance * scale - scale;
}

int word_pixel_height(int scale) { return kGlyphHeight * scale; }

TextRegionBox render_word(Image& image, const std::string& word, int x, int y, int scale,
                          Color color) {
    if (scale < 1) throw DataError("render_word: scale must be >= 1");
    for (char c : word)
        if (!font_has_glyph(c)) throw DataError(std::string("no glyph for character '") + c + "'");
    int w = word_pixel_width(word, scale);
    int h = word_pixel_height(scale);
    if (x < 0 || y < 0 || x + w > image.width || y + h > image.height)
        throw DataError("render_word: box " + std::to_string(w) + "x" + std::to_string(h) +
                        " at (" + std::to_string(x) + "," + std::to_string(y) +
                        ") exceeds image " + std::to_string(image.width) + "x" +
                        std::to_string(image.height));
    for (size_t ci = 0; ci < word.size(); ++ci) {
        const Glyph& g = glyph_for(word[ci]);
        int gx = x + static_cast<int>(ci) * kGlyphAdvance * scale;
        for (int row = 0; row < kGlyphHeight; ++row) {
            for (int col = 0; col < kGlyphWidth; ++col) {
                if (!((g.rows[static_cast<size_t>(row)] >> (kGlyphWidth - 1 - col)) & 1)) continue;
                for (int dy = 0; dy < scale; ++dy) {
                    for (int dx = 0; dx < scale; ++dx) {
                        uint8_t* p = image.px(gx + col * scale + dx, y + row * scale + dy);
                        p[0] = color.r;
                        p[1] = color.g;
                        p[2] = color.b;
                    }
                }
            }
        }
    }
    TextRegionBox box;
    box.x = x;
    box.y = y;
    box.w = w;
    box.h = h;
    box.text = word;
    box.source = BoxSource::GroundTruth;
    return box;
}

// ---------------------------------------------------------------------------
// resampling and blur
// ---------------------------------------------------------------------------

namespace {

// Round half to even, then clamp to [0,255]. Relies on the default
// FE_TONEAREST rounding mode.
uint8_t quantize(double v) {
    double r = std::nearbyint(v);
    if (r < 0.0) r = 0.0;
    if (r > 255.0) r = 255.0;
    return static_cast<uint8_t>(r);
}

// Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1. Iterates so it stays
// valid even when the overhang exceeds the extent.
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

}  // namespace

Image resize_bilinear(const Image& image, int target_side) {
    if (target_side < 1) throw DataError("resize target must be >= 1");
    Image out(target_side, target_side);
    const int sw = image.width, sh = image.height;
    for (int ty = 0; ty < target_side; ++ty) {
        double sy = target_side == 1 ? 0.0
                                     : static_cast<double>(ty) * (sh - 1) / (target_side - 1);
        int y0 = static_cast<int>(std::floor(sy));
        int y1 = std::min(y0 + 1, sh - 1);
        double fy = sy - y0;
        for (int tx = 0; tx < target_side; ++tx) {
            double sx = target_side == 1 ? 0.0
                                         : static_cast<double>(tx) * (sw - 1) / (target_side - 1);
            int x0 = static_cast<int>(std::floor(sx));
            int x1 = std::min(x0 + 1, sw - 1);
            double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double v00 = image.px(x0, y0)[c], v10 = image.px(x1, y0)[c];
                double v01 = image.px(x0, y1)[c], v11 = image.px(x1, y1)[c];
                double v = v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) +
                           v01 * (1 - fx) * fy + v11 * fx * fy;
                out.px(tx, ty)[c] = quantize(v);
            }
        }
    }
    return out;
}

std::vector<double> gaussian_kernel(int radius) {
    if (radius < 1) throw DataError("blur radius must be >= 1");
    double sigma = static_cast<double>(radius) / 3.0;
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
        k[static_cast<size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

void gaussian_blur_region(Image& image, const TextRegionBox& box, int radius) {
    if (box.w <= 0 || box.h <= 0) throw DataError("blur box must have positive extent");
    if (box.x < 0 || box.y < 0 || box.x + box.w > image.width || box.y + box.h > image.height)
        throw DataError("blur box outside image bounds");
    std::vector<double> kernel = gaussian_kernel(radius);

    // Horizontal pass over all rows (reflection happens against the image,
    // not the box), restricted to the box columns.
    const int H = image.height;
    std::vector<double> hbuf(static_cast<size_t>(H) * box.w * 3);
    for (int y = 0; y < H; ++y) {
        for (int bx = 0; bx < box.w; ++bx) {
            int x = box.x + bx;
            double acc[3] = {0, 0, 0};
            for (int d = -radius; d <= radius; ++d) {
                const uint8_t* p = image.px(reflect_index(x + d, image.width), y);
                double w = kernel[static_cast<size_t>(d + radius)];
                acc[0] += w * p[0];
                acc[1] += w * p[1];
                acc[2] += w * p[2];
            }
            double* o = &hbuf[(static_cast<size_t>(y) * box.w + bx) * 3];
            o[0] = acc[0];
            o[1] = acc[1];
            o[2] = acc[2];
        }
    }
    for (int by = 0; by < box.h; ++by) {
        int y = box.y + by;
        for (int bx = 0; bx < box.w; ++bx) {
            double acc[3] = {0, 0, 0};
            for (int d = -radius; d <= radius; ++d) {
                int yy = reflect_index(y + d, H);
                const double* p = &hbuf[(static_cast<size_t>(yy) * box.w + bx) * 3];
                double w = kernel[static_cast<size_t>(d + radius)];
                acc[0] += w * p[0];
                acc[1] += w * p[1];
                acc[2] += w * p[2];
            }
            uint8_t* o = image.px(box.x + bx, y);
            o[0] = quantize(acc[0]);
            o[1] = quantize(acc[1]);
            o[2] = quantize(acc[2]);
        }
    }
}

// ---------------------------------------------------------------------------
// shapes
// ---------------------------------------------------------------------------

std::string shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Ball: return "ball";
        case ShapeKind::Box: return "box";
        case ShapeKind::Tri: return "tri";
        case ShapeKind::Ring: return "ring";
        case ShapeKind::Star: return "star";
    }
    throw DataError("unknown shape kind");
}

void draw_shape(Image& image, ShapeKind kind, double cx, double cy, double radius,
                double rotation, Color color) {
    if (radius <= 0) throw DataError("shape radius must be positive");
    double cosr = std::cos(-rotation), sinr = std::sin(-rotation);
    int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
    int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(cx + radius + 1)));
    int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
    int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(cy + radius + 1)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
            double u = dx * cosr - dy * sinr;
            double v = dx * sinr + dy * cosr;
            bool inside = false;
            switch (kind) {
                case ShapeKind::Ball:
                    inside = u * u + v * v <= radius * radius;
                    break;
                case ShapeKind::Box:
                    inside = std::max(std::abs(u), std::abs(v)) <= radius * 0.78;
                    break;
                case ShapeKind::Tri: {
                    // Equilateral triangle, apex up in the shape frame.
                    double px[3], py[3];
                    for (int kv = 0; kv < 3; ++kv) {
                        double a = -M_PI / 2.0 + kv * 2.0 * M_PI / 3.0;
                        px[kv] = radius * std::cos(a);
                        py[kv] = radius * std::sin(a);
                    }
                    inside = true;
                    for (int kv = 0; kv < 3 && inside; ++kv) {
                        int kn = (kv + 1) % 3;
                        double cross = (px[kn] - px[kv]) * (v - py[kv]) -
                                       (py[kn] - py[kv]) * (u - px[kv]);
                        if (cross < 0) inside = false;
                    }
                    break;
                }
                case ShapeKind::Ring: {
                    double d2 = u * u + v * v;
                    inside = d2 <= radius * radius && d2 >= 0.3 * radius * radius;
                    break;
                }
                case ShapeKind::Star: {
                    // Astroid-style four-pointed star.
                    double t = std::cbrt(u * u) + std::cbrt(v * v);
                    inside = t <= std::cbrt(radius * radius);
                    break;
                }
            }
            if (inside) {
                uint8_t* p = image.px(x, y);
                p[0] = color.r;
                p[1] = color.g;
                p[2] = color.b;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

const uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& image) {
    if (image.width <= 0 || image.height <= 0) throw DataError("cannot encode an empty image");
    std::vector<uint8_t> out(kPngSig, kPngSig + 8);

    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(image.width));
    put_u32(ihdr, static_cast<uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(out, "IHDR", ihdr);

    const size_t stride = static_cast<size_t>(image.width) * 3;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * static_cast<size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);  // filter: none
        const uint8_t* row = image.pixels.data() + static_cast<size_t>(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw DataError("PNG deflate failed");
    comp.resize(bound);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});
    return out;
}

Image decode_png(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw DataError("not a PNG file");
    size_t pos = 8;
    int width = 0, height = 0;
    bool seen_ihdr = false;
    std::vector<uint8_t> idat;
    while (pos + 12 <= bytes.size()) {
        uint32_t len = get_u32(&bytes[pos]);
        std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
        if (pos + 12 + len > bytes.size()) throw DataError("truncated PNG chunk");
        const uint8_t* payload = &bytes[pos + 8];
        if (type == "IHDR") {
            if (len != 13) throw DataError("malformed IHDR");
            width = static_cast<int>(get_u32(payload));
            height = static_cast<int>(get_u32(payload + 4));
            int depth = payload[8], color = payload[9], interlace = payload[12];
            if (depth != 8 || color != 2 || interlace != 0)
                throw DataError("unsupported PNG variant (need 8-bit RGB, no interlacing)");
            seen_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || width <= 0 || height <= 0) throw DataError("PNG missing IHDR");

    const size_t stride = static_cast<size_t>(width) * 3;
    std::vector<uint8_t> raw((stride + 1) * static_cast<size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || raw_len != raw.size()) throw DataError("PNG inflate failed");

    Image img(width, height);
    std::vector<uint8_t> prev(stride, 0);
    for (int y = 0; y < height; ++y) {
        const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1)];
        uint8_t filter = src[0];
        const uint8_t* data = src + 1;
        uint8_t* dst = img.pixels.data() + static_cast<size_t>(y) * stride;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= 3 ? dst[i - 3] : 0;
            int b = prev[i];
            int c = i >= 3 ? prev[i - 3] : 0;
            int v = data[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw DataError("unknown PNG filter type");
            }
            dst[i] = static_cast<uint8_t>(v & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return img;
}

void write_png(const std::string& path, const Image& image) {
    write_binary_file(path, encode_png(image));
}

Image read_png(const std::string& path) { return decode_png(read_binary_file(path)); }

}  // namespace microclip::raster
