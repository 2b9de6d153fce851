#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "microclip/raster.hpp"
#include "testutil.hpp"

using namespace microclip;
using namespace microclip::raster;

namespace {

double region_variance(const Image& img, const TextRegionBox& box) {
    double sum = 0.0, sum2 = 0.0;
    int64_t n = 0;
    for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = img.px(x, y)[c];
                sum += v;
                sum2 += v * v;
                ++n;
            }
    double mean = sum / static_cast<double>(n);
    return sum2 / static_cast<double>(n) - mean * mean;
}

double gray(const Image& img, int x, int y) {
    const uint8_t* p = img.px(x, y);
    return (static_cast<double>(p[0]) + p[1] + p[2]) / 3.0;
}

double max_gradient(const Image& img, const TextRegionBox& box) {
    double worst = 0.0;
    for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) {
            if (x + 1 < box.x + box.w)
                worst = std::max(worst, std::abs(gray(img, x + 1, y) - gray(img, x, y)));
            if (y + 1 < box.y + box.h)
                worst = std::max(worst, std::abs(gray(img, x, y + 1) - gray(img, x, y)));
        }
    return worst;
}

}  // namespace

TEST_CASE("font metric identity and determinism") {
    Image a(64, 32, {255, 255, 255});
    Image b(64, 32, {255, 255, 255});
    TextRegionBox box = render_word(a, "red ball", 2, 3, 1, {0, 0, 0});
    CHECK(box.w == 8 * 6 * 1 - 1);
    CHECK(box.h == 7);
    CHECK(box.x == 2);
    CHECK(box.y == 3);
    CHECK(box.text == "red ball");
    render_word(b, "red ball", 2, 3, 1, {0, 0, 0});
    CHECK(a == b);

    Image c(128, 64, {255, 255, 255});
    TextRegionBox box2 = render_word(c, "Star-42", 10, 10, 3, {0, 0, 0});
    CHECK(box2.w == 7 * 6 * 3 - 3);
    CHECK(box2.h == 21);
}

TEST_CASE("glyph bit-count oracle") {
    for (int scale : {1, 2, 3}) {
        Image img(200, 40, {255, 255, 255});
        std::string word = "ring";
        render_word(img, word, 1, 1, scale, {0, 0, 0});
        int expected = 0;
        for (char ch : word) expected += glyph_set_bits(ch);
        expected *= scale * scale;
        int black = 0;
        for (size_t i = 0; i < img.pixels.size(); i += 3)
            if (img.pixels[i] == 0 && img.pixels[i + 1] == 0 && img.pixels[i + 2] == 0) ++black;
        CHECK(black == expected);
    }
}

TEST_CASE("render_word error paths") {
    Image img(32, 32);
    try {
        render_word(img, "na\xc3\xafve", 0, 0, 1, {0, 0, 0});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("glyph") != std::string::npos);
    }
    CHECK_THROWS_AS(render_word(img, "toolongword", 0, 0, 1, {0, 0, 0}), DataError);
    CHECK_THROWS_AS(render_word(img, "ok", 30, 30, 1, {0, 0, 0}), DataError);
}

TEST_CASE("resize: identity and constant cases") {
    Rng rng(99);
    Image img(17, 17);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.next_below(256));
    CHECK(resize_bilinear(img, 17) == img);

    Image flat(9, 9, {77, 120, 200});
    Image out = resize_bilinear(flat, 23);
    for (size_t i = 0; i < out.pixels.size(); i += 3) {
        CHECK(out.pixels[i] == 77);
        CHECK(out.pixels[i + 1] == 120);
        CHECK(out.pixels[i + 2] == 200);
    }
}

TEST_CASE("resize: checkerboard matches the closed-form bilinear table") {
    Image img(2, 2);
    img.px(0, 0)[0] = img.px(0, 0)[1] = img.px(0, 0)[2] = 255;
    img.px(1, 1)[0] = img.px(1, 1)[1] = img.px(1, 1)[2] = 255;
    Image out = resize_bilinear(img, 4);
    const int expect[4][4] = {{255, 170, 85, 0},
                              {170, 142, 113, 85},
                              {85, 113, 142, 170},
                              {0, 85, 170, 255}};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) CHECK(static_cast<int>(out.px(x, y)[c]) == expect[y][x]);
}

TEST_CASE("gaussian kernel is normalized") {
    for (int r : {1, 3, 15}) {
        auto k = gaussian_kernel(r);
        CHECK(k.size() == static_cast<size_t>(2 * r + 1));
        double sum = 0.0;
        for (double w : k) sum += w;
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("blur of a constant image changes nothing") {
    Image img(20, 20, {42, 170, 99});
    Image before = img;
    gaussian_blur_region(img, {3, 4, 10, 12, "", BoxSource::GroundTruth}, 5);
    CHECK(img == before);
}

TEST_CASE("blur leaves pixels outside the box untouched") {
    Image img(32, 32, {255, 255, 255});
    TextRegionBox box = render_word(img, "ball", 4, 10, 1, {0, 0, 0});
    Image before = img;
    gaussian_blur_region(img, box, 3);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            bool inside = x >= box.x && x < box.x + box.w && y >= box.y && y < box.y + box.h;
            if (!inside)
                for (int c = 0; c < 3; ++c) CHECK(img.px(x, y)[c] == before.px(x, y)[c]);
        }
}

TEST_CASE("single bright pixel: center equals quantized peak kernel weight") {
    Image img(15, 15, {0, 0, 0});
    img.px(7, 7)[0] = img.px(7, 7)[1] = img.px(7, 7)[2] = 255;
    auto k = gaussian_kernel(3);
    double expect_real = 255.0 * k[3] * k[3];
    uint8_t expect = static_cast<uint8_t>(std::nearbyint(expect_real));
    gaussian_blur_region(img, {0, 0, 15, 15, "", BoxSource::GroundTruth}, 3);
    CHECK(img.px(7, 7)[0] == expect);
    CHECK(img.px(7, 7)[1] == expect);
    CHECK(img.px(7, 7)[2] == expect);
}

TEST_CASE("double blur never increases region variance") {
    Image img(64, 64, {230, 230, 230});
    TextRegionBox box = render_word(img, "blue ring", 4, 20, 1, {0, 0, 0});
    gaussian_blur_region(img, box, 4);
    double v1 = region_variance(img, box);
    gaussian_blur_region(img, box, 4);
    double v2 = region_variance(img, box);
    CHECK(v2 <= v1 + 1e-9);
}

TEST_CASE("radius-15 blur at 224 drives gradients below the legibility threshold") {
    Image img(224, 224, {245, 245, 245});
    TextRegionBox box = render_word(img, "blue cross", 20, 100, 3, {0, 0, 0});
    CHECK(max_gradient(img, box) == doctest::Approx(255.0));
    gaussian_blur_region(img, box, 15);
    // Documented legibility bound: no neighboring pair inside the region may
    // differ by more than 32/255 gray levels after the radius-15 blur.
    CHECK(max_gradient(img, box) < 32.0);
}

TEST_CASE("png round-trips arbitrary images byte-exactly") {
    Rng rng(1234);
    for (int trial = 0; trial < 8; ++trial) {
        int w = 1 + static_cast<int>(rng.next_below(40));
        int h = 1 + static_cast<int>(rng.next_below(40));
        Image img(w, h);
        for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.next_below(256));
        auto bytes = encode_png(img);
        Image back = decode_png(bytes);
        CHECK(back == img);
        // and the encoding itself is stable
        CHECK(encode_png(back) == bytes);
    }
    CHECK_THROWS_AS(decode_png({1, 2, 3, 4}), DataError);
}

TEST_CASE("shape rendering is deterministic and kinds are distinct") {
    for (int kind = 0; kind < kShapeKindCount; ++kind) {
        Image a(48, 48, {250, 250, 250});
        Image b(48, 48, {250, 250, 250});
        draw_shape(a, static_cast<ShapeKind>(kind), 24, 24, 14, 0.3, {200, 30, 30});
        draw_shape(b, static_cast<ShapeKind>(kind), 24, 24, 14, 0.3, {200, 30, 30});
        CHECK(a == b);
    }
    Image ball(48, 48), ring(48, 48);
    draw_shape(ball, ShapeKind::Ball, 24, 24, 14, 0, {255, 255, 255});
    draw_shape(ring, ShapeKind::Ring, 24, 24, 14, 0, {255, 255, 255});
    CHECK(!(ball == ring));
    // Ring has a hole at its center.
    CHECK(ring.px(24, 24)[0] == 0);
    CHECK(ball.px(24, 24)[0] == 255);
}
