#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lfcx/data_io.hpp"
#include "lfcx/errors.hpp"

using namespace lfcx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lfcx_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

// Uncompressed 8-bit BMP with a grey palette.
void write_gray_bmp(const fs::path& p, int w, int h, std::uint8_t (*value)(int, int)) {
  const int row = (w + 3) / 4 * 4;
  const std::uint32_t offset = 14 + 40 + 256 * 4, size = offset + row * h;
  std::ofstream f(p, std::ios::binary);
  auto u16 = [&](std::uint16_t v) { f.put(char(v & 0xff)).put(char(v >> 8)); };
  auto u32 = [&](std::uint32_t v) { u16(v & 0xffff), u16(v >> 16); };
  f.put('B').put('M');
  u32(size), u32(0), u32(offset);
  u32(40), u32(w), u32(h), u16(1), u16(8), u32(0), u32(row * h), u32(2835), u32(2835), u32(256), u32(0);
  for (int i = 0; i < 256; ++i) f.put(char(i)).put(char(i)).put(char(i)).put(0);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < row; ++x) f.put(char(x < w ? value(x, y) : 0));
  }
}

SequencePair fixture(Variant v, std::size_t frames) {
  SynthSpec spec;
  spec.frames = frames;
  spec.width = spec.height = 64;
  spec.size_px = 12;
  spec.variant = v;
  return synth_sequence(spec, 3);
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("ground-truth parsing") {
  BoundingBox b = parse_box_line("10,20,30,40", 1);
  CHECK(b.x == 10);
  CHECK(b.y == 20);
  CHECK(b.w == 30);
  CHECK(b.h == 40);
  b = parse_box_line("1.5\t2.5\t3\t4", 1);
  CHECK(b.x == 1.5);
  CHECK(b.h == 4);
  CHECK(parse_box_line(" 1 2 3 4 ", 1).w == 3);
  CHECK_THROWS_AS(parse_box_line("1,2,3", 7), IoError);
  CHECK_THROWS_AS(parse_box_line("1,2,x,4", 7), IoError);
  try {
    parse_box_line("1,2,3", 7);
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }

  const fs::path dir = scratch("gt");
  write_text(dir / "gt.txt", "1,2,3,4\n5,6,7,8\n\n");
  CHECK(read_boxes(dir / "gt.txt").size() == 2);
  write_text(dir / "bad.txt", "1,2,3,4\n\n5,6,7,8\n");
  CHECK_THROWS_AS(read_boxes(dir / "bad.txt"), IoError);
  write_text(dir / "res.txt", "1,2,3,4,5,6,7,8\n");
  auto rows = read_result_boxes(dir / "res.txt");
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].size() == 2);
  CHECK(rows[0][1].x == 5);
  write_result_boxes(dir / "out.txt", rows);
  CHECK(read_result_boxes(dir / "out.txt")[0][1].h == 8);
  write_confidence(dir / "conf.txt", {{0.25}, {0.5, 0.75}});
  auto conf = read_confidence(dir / "conf.txt");
  CHECK(conf[1][1] == 0.75);
  CHECK_THROWS_AS(read_boxes(dir / "missing.txt"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("sequence round trip") {
  for (Variant v : {Variant::kRgbt, Variant::kRgbs}) {
    const SequencePair seq = fixture(v, 3);
    const fs::path dir = scratch("roundtrip") / "seqA";
    write_sequence(dir, seq);
    CHECK(fs::exists(dir / "visible" / "000001.png"));
    CHECK(fs::exists(dir / modality_dir(v) / "000003.png"));
    SequencePair back = load_sequence(dir, v);
    CHECK(back.name == "seqA");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.rgb[i].load() == seq.rgb[i].load());
      CHECK(back.x[i].load() == seq.x[i].load());
      CHECK(back.gt_rgb[i].x == seq.gt_rgb[i].x);
      CHECK(back.gt_rgb[i].w == seq.gt_rgb[i].w);
    }
    CHECK(back.gt_x.has_value() == is_split(v));
    if (is_split(v)) CHECK((*back.gt_x)[2].y == (*seq.gt_x)[2].y);
    fs::remove_all(dir.parent_path());
  }
}

TEST_CASE("loader errors are reported, never skipped") {
  const SequencePair seq = fixture(Variant::kRgbt, 3);
  const fs::path dir = scratch("errors");
  write_sequence(dir, seq);

  fs::remove(dir / "infrared" / "000003.png");
  try {
    load_sequence(dir, Variant::kRgbt);
    FAIL("expected an error");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('3') != std::string::npos);
    CHECK(msg.find('2') != std::string::npos);
  }
  write_image(dir / "infrared" / "000003.png", seq.x[2].load());

  CHECK_THROWS_AS(load_sequence(dir, Variant::kRgbd), IoError);  // no depth/
  CHECK_THROWS_AS(load_sequence(dir, Variant::kRgbs), IoError);  // no sonar/ or second gt

  write_text(dir / "visible" / "notes.txt", "x");
  CHECK_THROWS_AS(load_sequence(dir, Variant::kRgbt), IoError);
  fs::remove(dir / "visible" / "notes.txt");

  write_text(dir / "groundtruth.txt", "1,2,3,4\n1,2,3,4\n");
  CHECK_THROWS_AS(load_sequence(dir, Variant::kRgbt), IoError);
  write_text(dir / "groundtruth.txt", "1,2,3,4\n1;2;3;4\n1,2,3,4\n");
  CHECK_THROWS_AS(load_sequence(dir, Variant::kRgbt), IoError);
  fs::remove_all(dir);
}

TEST_CASE("single-channel images are replicated") {
  const fs::path dir = scratch("gray");
  write_gray_bmp(dir / "g.bmp", 5, 3, [](int x, int y) { return std::uint8_t(40 * y + x); });
  Image img = read_image(dir / "g.bmp");
  REQUIRE(img.width == 5);
  REQUIRE(img.height == 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) CHECK(img.at(x, y)[c] == 40 * y + x);
  CHECK_THROWS_AS(read_image(dir / "g.jpg"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic sequences") {
  SynthSpec spec;
  spec.frames = 200;
  spec.speed_px = 8;
  const SequencePair a = synth_sequence(spec, 11), b = synth_sequence(spec, 11);
  const SequencePair c = synth_sequence(spec, 12);
  CHECK(a.rgb[57].load() == b.rgb[57].load());
  CHECK(a.x[199].load() == b.x[199].load());
  CHECK_FALSE(a.rgb[0].load() == c.rgb[0].load());

  double max_step = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& g = a.gt_rgb[i];
    CHECK(g.x >= 0);
    CHECK(g.y >= 0);
    CHECK(g.x + g.w <= spec.width);
    CHECK(g.y + g.h <= spec.height);
    if (i) max_step = std::max({max_step, std::abs(g.x - a.gt_rgb[i - 1].x), std::abs(g.y - a.gt_rgb[i - 1].y)});
  }
  CHECK(max_step <= 9);  // speed 8 plus rounding

  // Mean target intensity differs between modalities by more than 20/255.
  for (std::size_t i = 0; i < a.size(); i += 20) {
    const Image r = a.rgb[i].load(), x = a.x[i].load();
    const auto& g = a.gt_rgb[i];
    double sr = 0, sx = 0, n = 0;
    for (std::size_t y = std::size_t(g.y); y < std::size_t(g.y + g.h); ++y)
      for (std::size_t xx = std::size_t(g.x); xx < std::size_t(g.x + g.w); ++xx) {
        sr += (r.at(xx, y)[0] + r.at(xx, y)[1] + r.at(xx, y)[2]) / 3.0;
        sx += x.at(xx, y)[0];
        n += 1;
      }
    CHECK(std::abs(sr - sx) / n > 20);
  }

  SynthSpec rgbs = spec;
  rgbs.variant = Variant::kRgbs;
  const SequencePair s = synth_sequence(rgbs, 5);
  REQUIRE(s.gt_x);
  CHECK(s.gt_x->size() == s.size());
  CHECK((*s.gt_x)[10].x != s.gt_rgb[10].x);

  CHECK_THROWS_AS(synth_sequence(SynthSpec{.frames = 0}, 1), ContractError);
}

TEST_CASE("synthetic ground truth matches the rendered mask") {
  for (bool ellipse : {false, true}) {
    SynthSpec spec;
    spec.frames = 30;
    spec.noise = 0;
    spec.ellipse = ellipse;
    const SequencePair seq = synth_sequence(spec, 21);
    double worst = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Image img = seq.rgb[i].load();
      // Target pixels are the only ones with red 225 and blue 40.
      long x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
      for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
          if (img.at(x, y)[0] == 225 && img.at(x, y)[2] == 40) {
            x0 = std::min(x0, long(x)), y0 = std::min(y0, long(y));
            x1 = std::max(x1, long(x)), y1 = std::max(y1, long(y));
          }
      REQUIRE(x1 >= 0);
      const auto& g = seq.gt_rgb[i];
      worst = std::max({worst, std::abs(x0 - g.x), std::abs(y0 - g.y), std::abs(x1 + 1 - (g.x + g.w)),
                        std::abs(y1 + 1 - (g.y + g.h))});
    }
    CHECK(worst <= 1.0);
  }
}

}
