#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lfcx/box.hpp"
#include "lfcx/model.hpp"
#include "lfcx/tensor.hpp"

namespace lfcx {

// 8-bit RGB, row-major H x W x 3.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * 3, fill) {}
  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * 3]; }
  bool operator==(const Image&) const = default;
};

// PNG or BMP. Single-channel files are replicated to three channels.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);

// [3 x H x W] with (v / 255 - mean) / std.
Tensor to_tensor(const Image& img, double mean, double std);

// Square crop of side `side` centred on (cx, cy), resampled bicubically to
// out x out. Pixels outside the frame take the per-channel mean of the image.
Image crop_resize(const Image& img, double cx, double cy, double side, std::size_t out);

// Name of the second-modality directory for a variant.
std::string modality_dir(Variant v);

// A frame is either on disk (decoded on access) or held in memory.
struct Frame {
  std::filesystem::path path;
  std::shared_ptr<const Image> image;
  Image load() const;
};

struct SequencePair {
  std::string name;
  Variant variant = Variant::kRgbt;
  std::vector<Frame> rgb, x;
  std::vector<BoundingBox> gt_rgb;
  // Second box track, RGB-S only.
  std::optional<std::vector<BoundingBox>> gt_x;

  std::size_t size() const { return rgb.size(); }
  void validate() const;
};

// "x,y,w,h" with comma or tab separators. `line_no` is used in messages.
BoundingBox parse_box_line(const std::string& line, std::size_t line_no);
std::vector<BoundingBox> read_boxes(const std::filesystem::path& path);
void write_boxes(const std::filesystem::path& path, const std::vector<BoundingBox>& boxes);
// One box (4 values) or two (8 values) per line.
std::vector<std::vector<BoundingBox>> read_result_boxes(const std::filesystem::path& path);
void write_result_boxes(const std::filesystem::path& path,
                        const std::vector<std::vector<BoundingBox>>& rows);
// One comma-separated value per box on each line.
std::vector<std::vector<double>> read_confidence(const std::filesystem::path& path);
void write_confidence(const std::filesystem::path& path,
                      const std::vector<std::vector<double>>& rows);

// dir/visible, dir/<modality>, dir/groundtruth.txt (+ groundtruth_sonar.txt).
SequencePair load_sequence(const std::filesystem::path& dir, Variant v);
void write_sequence(const std::filesystem::path& dir, const SequencePair& seq);

struct SynthSpec {
  std::size_t frames = 100;
  std::size_t width = 256, height = 256;
  double speed_px = 4.0;  // maximum per-frame displacement per axis
  std::size_t size_px = 32;
  double noise = 0.08;    // per-pixel noise std as a fraction of 255
  bool ellipse = false;
  Variant variant = Variant::kRgbt;
};

// Textured target drifting over a noise background. The second modality shows
// the scene with inverted contrast and independent noise; for RGB-S its box
// is displaced by a fixed offset.
SequencePair synth_sequence(const SynthSpec& spec, std::uint64_t seed);

}  // namespace lfcx
