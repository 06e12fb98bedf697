#include <doctest.h>

#include "ivfuse/data/dataset.hpp"

#include <png.h>

#include <filesystem>
#include <fstream>

#include "ivfuse/core/random.hpp"

using namespace ivfuse;
using namespace ivfuse::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ivfuse_data_test_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

RawImage random_raw(int h, int w, int channels, Rng& rng) {
    RawImage img;
    img.width = w;
    img.height = h;
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(w) * h * channels);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    return img;
}

}  // namespace

TEST_SUITE_BEGIN("data_pipeline");

TEST_CASE("png round trip preserves bytes exactly") {
    TempDir tmp;
    Rng rng(101);
    for (int channels : {1, 3}) {
        RawImage img = random_raw(9, 13, channels, rng);
        std::string path = tmp / ("rt" + std::to_string(channels) + ".png");
        write_png(path, img);
        RawImage back = read_image(path);
        CHECK(back.width == img.width);
        CHECK(back.height == img.height);
        CHECK(back.channels == img.channels);
        CHECK(back.pixels == img.pixels);
    }
}

TEST_CASE("bmp round trip preserves bytes exactly") {
    TempDir tmp;
    Rng rng(102);
    RawImage img = random_raw(7, 10, 3, rng);
    std::string path = tmp / "rt.bmp";
    write_bmp(path, img);
    RawImage back = read_image(path);
    CHECK(back.channels == 3);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("load_pair on all-zero images") {
    TempDir tmp;
    RawImage zero1;
    zero1.width = zero1.height = 8;
    zero1.channels = 1;
    zero1.pixels.assign(64, 0);
    RawImage zero3 = zero1;
    zero3.channels = 3;
    zero3.pixels.assign(64 * 3, 0);
    write_png(tmp / "a_ir.png", zero1);
    write_png(tmp / "a_vis.png", zero3);
    ImagePair pair = load_pair(tmp / "a_ir.png", tmp / "a_vis.png");
    CHECK(pair.infrared.rows() == 8);
    CHECK((pair.infrared == 0.0).all());
    CHECK((pair.visible.r == 0.0).all());
    CHECK((pair.visible.g == 0.0).all());
    CHECK((pair.visible.b == 0.0).all());
}

TEST_CASE("load_pair round trip equals bytes over 255 exactly") {
    TempDir tmp;
    Rng rng(103);
    RawImage ir = random_raw(6, 5, 1, rng);
    RawImage vis = random_raw(6, 5, 3, rng);
    write_png(tmp / "b_ir.png", ir);
    write_png(tmp / "b_vis.png", vis);
    ImagePair pair = load_pair(tmp / "b_ir.png", tmp / "b_vis.png");
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 5; ++c) {
            CHECK(pair.infrared(r, c) == ir.at(r, c, 0) / 255.0);
            CHECK(pair.visible.r(r, c) == vis.at(r, c, 0) / 255.0);
            CHECK(pair.visible.g(r, c) == vis.at(r, c, 1) / 255.0);
            CHECK(pair.visible.b(r, c) == vis.at(r, c, 2) / 255.0);
        }
}

TEST_CASE("load_pair error paths") {
    TempDir tmp;
    Rng rng(104);
    write_png(tmp / "ir.png", random_raw(8, 8, 1, rng));
    write_png(tmp / "vis.png", random_raw(8, 8, 3, rng));
    write_png(tmp / "vis_small.png", random_raw(8, 7, 3, rng));
    write_png(tmp / "vis_gray.png", random_raw(8, 8, 1, rng));

    CHECK_THROWS_AS((void)load_pair(tmp / "missing.png", tmp / "vis.png"), IoError);
    CHECK_THROWS_AS((void)load_pair(tmp / "ir.png", tmp / "vis_small.png"), ValidationError);
    CHECK_THROWS_AS((void)load_pair(tmp / "ir.png", tmp / "vis_gray.png"), ValidationError);

    // ir with 3 differing channels is rejected, 3 identical channels accepted
    RawImage tri = random_raw(8, 8, 3, rng);
    write_png(tmp / "ir3.png", tri);
    CHECK_THROWS_AS((void)load_pair(tmp / "ir3.png", tmp / "vis.png"), ValidationError);
    RawImage gray3 = random_raw(8, 8, 1, rng);
    RawImage replicated;
    replicated.width = replicated.height = 8;
    replicated.channels = 3;
    replicated.pixels.resize(64 * 3);
    for (int i = 0; i < 64; ++i)
        for (int c = 0; c < 3; ++c) replicated.pixels[static_cast<std::size_t>(i * 3 + c)] = gray3.pixels[static_cast<std::size_t>(i)];
    write_png(tmp / "ir_rep.png", replicated);
    CHECK_NOTHROW((void)load_pair(tmp / "ir_rep.png", tmp / "vis.png"));
}

TEST_CASE("ycbcr conversion: anchors and round trip") {
    ColorImage black{Plane::Zero(2, 2), Plane::Zero(2, 2), Plane::Zero(2, 2)};
    Plane y;
    Chroma c;
    rgb_to_ycbcr(black, y, c);
    CHECK((y == 0.0).all());
    CHECK((c.cb == 0.5).all());
    CHECK((c.cr == 0.5).all());

    ColorImage red{Plane::Constant(2, 2, 1.0), Plane::Zero(2, 2), Plane::Zero(2, 2)};
    rgb_to_ycbcr(red, y, c);
    CHECK(y(0, 0) == doctest::Approx(0.299).epsilon(1e-12));

    Rng rng(105);
    ColorImage img;
    img.r = Plane::NullaryExpr(9, 7, [&] { return rng.uniform(); });
    img.g = Plane::NullaryExpr(9, 7, [&] { return rng.uniform(); });
    img.b = Plane::NullaryExpr(9, 7, [&] { return rng.uniform(); });
    rgb_to_ycbcr(img, y, c);
    CHECK((y >= 0.0).all());
    CHECK((y <= 1.0).all());
    CHECK((c.cb >= 0.0).all());
    CHECK((c.cb <= 1.0).all());
    ColorImage back = reattach_color(y, c);
    CHECK((back.r - img.r).abs().maxCoeff() < 1e-6);
    CHECK((back.g - img.g).abs().maxCoeff() < 1e-6);
    CHECK((back.b - img.b).abs().maxCoeff() < 1e-6);

    Plane bad = Plane::Constant(2, 2, 1.5);
    ColorImage invalid{bad, bad, bad};
    CHECK_THROWS_AS(rgb_to_ycbcr(invalid, y, c), ValidationError);
}

TEST_CASE("reattach_color extremes and shape validation") {
    Chroma neutral{Plane::Constant(3, 3, 0.5), Plane::Constant(3, 3, 0.5)};
    ColorImage black = reattach_color(Plane::Zero(3, 3), neutral);
    CHECK((black.r == 0.0).all());
    CHECK((black.g == 0.0).all());
    CHECK((black.b == 0.0).all());
    ColorImage white = reattach_color(Plane::Constant(3, 3, 1.0), neutral);
    CHECK((white.r == 1.0).all());
    CHECK((white.g == 1.0).all());
    CHECK((white.b == 1.0).all());
    Chroma wrong{Plane::Constant(2, 3, 0.5), Plane::Constant(2, 3, 0.5)};
    CHECK_THROWS_AS((void)reattach_color(Plane::Zero(3, 3), wrong), ValidationError);
}

TEST_CASE("annotation json round trip and validation") {
    TempDir tmp;
    AnnotationSet ann;
    ann.mask = Mask::Zero(6, 8);
    ann.mask.block(2, 3, 2, 2).setConstant(2);
    ann.boxes.push_back({2, {0.1, 0.1, 0.5, 0.5}});
    ann.boxes.push_back({0, {0.0, 0.25, 0.75, 1.0}});
    save_annotations(tmp / "a.json", ann);

    AnnotationSet back = load_annotations(tmp / "a.json", 3);
    REQUIRE(back.boxes.size() == 2);
    CHECK(back.boxes[0].cls == 2);
    CHECK(back.boxes[0].xyxy[2] == 0.5);
    CHECK((back.mask == ann.mask).all());
    CHECK(back.foreground_indices() == std::vector<std::int64_t>{0});

    // class index == C must be rejected
    CHECK_THROWS_AS((void)load_annotations(tmp / "a.json", 2), ValidationError);

    std::ofstream(tmp / "broken.json") << "{ not json";
    CHECK_THROWS_AS((void)load_annotations(tmp / "broken.json", 3), ParseError);

    // empty annotation: zero boxes, all-background mask
    AnnotationSet empty;
    empty.mask = Mask::Zero(4, 4);
    save_annotations(tmp / "e.json", empty);
    AnnotationSet eback = load_annotations(tmp / "e.json", 3);
    CHECK(eback.boxes.empty());
    CHECK((eback.mask == 0).all());
}

TEST_CASE("rle encodes multi-class masks") {
    Mask m(2, 3);
    m << 0, 0, 1, 1, 2, 2;
    auto counts = mask_to_rle(m);
    CHECK(counts == std::vector<std::int64_t>{0, 2, 1, 2, 2, 2});
    Mask back = mask_from_rle(counts, 2, 3);
    CHECK((back == m).all());
    CHECK_THROWS_AS((void)mask_from_rle({0, 5}, 2, 3), ParseError);
    CHECK_THROWS_AS((void)mask_from_rle({0, 7}, 2, 3), ParseError);
}

TEST_CASE("manifest scan is lexicographic and validates completeness") {
    TempDir tmp;
    Rng rng(106);
    fs::create_directories(tmp.path / "train" / "ir");
    fs::create_directories(tmp.path / "train" / "vis");
    fs::create_directories(tmp.path / "train" / "ann");
    AnnotationSet ann;
    ann.mask = Mask::Zero(4, 4);
    for (const char* id : {"b", "a", "c"}) {
        write_png((tmp.path / "train" / "ir" / (std::string(id) + ".png")).string(),
                  random_raw(4, 4, 1, rng));
        write_png((tmp.path / "train" / "vis" / (std::string(id) + ".png")).string(),
                  random_raw(4, 4, 3, rng));
        save_annotations((tmp.path / "train" / "ann" / (std::string(id) + ".json")).string(),
                         ann);
    }
    auto manifest = scan_manifest(tmp.path.string(), "train", true);
    REQUIRE(manifest.size() == 3);
    CHECK(manifest.entries[0].id == "a");
    CHECK(manifest.entries[1].id == "b");
    CHECK(manifest.entries[2].id == "c");

    // two scans agree entirely (deterministic loading)
    auto manifest2 = scan_manifest(tmp.path.string(), "train", true);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(manifest.entries[i].id == manifest2.entries[i].id);
        CHECK(manifest.entries[i].ir_path == manifest2.entries[i].ir_path);
    }

    fs::remove(tmp.path / "train" / "ann" / "b.json");
    CHECK_THROWS_AS((void)scan_manifest(tmp.path.string(), "train", true), IoError);
    CHECK_NOTHROW((void)scan_manifest(tmp.path.string(), "train", false));
    CHECK_THROWS_AS((void)scan_manifest(tmp.path.string(), "missing_split", true), IoError);
}

TEST_CASE("msrs-style layout with 362 pairs loads 362 image pairs") {
    TempDir tmp;
    Rng rng(107);
    fs::create_directories(tmp.path / "test" / "ir");
    fs::create_directories(tmp.path / "test" / "vis");
    RawImage ir = random_raw(6, 6, 1, rng);
    RawImage vis = random_raw(6, 6, 3, rng);
    for (int i = 0; i < 362; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "%05d", i);
        write_png((tmp.path / "test" / "ir" / (std::string(id) + ".png")).string(), ir);
        write_png((tmp.path / "test" / "vis" / (std::string(id) + ".png")).string(), vis);
    }
    auto manifest = scan_manifest(tmp.path.string(), "test", false);
    REQUIRE(manifest.size() == 362);
    std::size_t loaded = 0;
    for (const auto& e : manifest.entries) {
        ImagePair p = load_pair(e.ir_path, e.vis_path);
        if (p.infrared.rows() == 6) ++loaded;
    }
    CHECK(loaded == 362);
}

TEST_CASE("16-bit png is rejected as unsupported bit depth") {
    TempDir tmp;
    std::string path = tmp / "deep.png";
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, 4, 4, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(4 * 2, 0x7f);
    for (int r = 0; r < 4; ++r) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    CHECK_THROWS_AS((void)read_image(path), FormatError);
}

TEST_CASE("an opaque alpha channel is dropped on read") {
    TempDir tmp;
    Rng rng(108);
    std::string path = tmp / "rgba.png";
    int w = 5, h = 4;
    std::vector<std::uint8_t> rgba(static_cast<std::size_t>(w) * h * 4);
    for (std::size_t i = 0; i < rgba.size(); ++i)
        rgba[i] = (i % 4 == 3) ? 255 : static_cast<std::uint8_t>(rng.uniform_int(256));
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < h; ++r)
        png_write_row(png, rgba.data() + static_cast<std::size_t>(r) * w * 4);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);

    RawImage img = read_image(path);
    CHECK(img.channels == 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                CHECK(img.at(r, c, ch) ==
                      rgba[static_cast<std::size_t>((r * w + c) * 4 + ch)]);
}

TEST_SUITE_END();
