#include "lfcx/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lfcx/errors.hpp"

namespace fs = std::filesystem;

namespace lfcx {

namespace {

bool supported_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".bmp";
}

cv::Mat to_mat(const Image& img) {
  cv::Mat rgb(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3,
              const_cast<std::uint8_t*>(img.pixels.data()));
  return rgb;
}

Image from_mat(const cv::Mat& m) {
  Image out(static_cast<std::size_t>(m.cols), static_cast<std::size_t>(m.rows));
  cv::Mat dst(m.rows, m.cols, CV_8UC3, out.pixels.data());
  m.copyTo(dst);
  return out;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (!supported_image(e.path()))
      throw IoError("unsupported file " + e.path().string() + " (frames must be PNG or BMP)");
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

// Values on one line, separated by commas, tabs or spaces.
std::vector<double> parse_values(const std::string& raw, std::size_t line_no,
                                 const std::string& where) {
  std::string line = raw;
  std::replace(line.begin(), line.end(), ',', ' ');
  std::replace(line.begin(), line.end(), '\t', ' ');
  std::istringstream is(line);
  std::vector<double> vals;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v))
      throw IoError(where + " line " + std::to_string(line_no) + ": cannot parse '" + tok + "'");
    vals.push_back(v);
  }
  return vals;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

}  // namespace

Image read_image(const fs::path& path) {
  if (!supported_image(path)) throw IoError("unsupported image format: " + path.string());
  if (!fs::is_regular_file(path)) throw IoError("missing image " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot decode " + path.string());
  if (m.depth() != CV_8U) throw IoError("only 8-bit images are supported: " + path.string());
  cv::Mat rgb;
  switch (m.channels()) {
    case 1: cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(m, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw IoError("unsupported channel count in " + path.string());
  }
  return from_mat(rgb);
}

void write_image(const fs::path& path, const Image& img) {
  if (!supported_image(path)) throw IoError("unsupported image format: " + path.string());
  cv::Mat bgr;
  cv::cvtColor(to_mat(img), bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write " + path.string());
}

Tensor to_tensor(const Image& img, double mean, double std) {
  Tensor t({3, img.height, img.width});
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      t[c * plane + i] = (img.pixels[i * 3 + c] / 255.0 - mean) / std;
  return t;
}

Image crop_resize(const Image& img, double cx, double cy, double side, std::size_t out) {
  if (!(side > 0)) throw ContractError("crop side must be positive");
  const cv::Mat src = to_mat(img);
  const cv::Scalar fill = cv::mean(src);
  const double s = static_cast<double>(out) / side;
  // Maps crop pixel centres onto source pixel centres.
  const double tx = (static_cast<double>(out) - 1) / 2 - s * (cx - 0.5);
  const double ty = (static_cast<double>(out) - 1) / 2 - s * (cy - 0.5);
  cv::Mat affine = (cv::Mat_<double>(2, 3) << s, 0, tx, 0, s, ty);
  cv::Mat dst;
  cv::warpAffine(src, dst, affine, cv::Size(static_cast<int>(out), static_cast<int>(out)),
                 cv::INTER_CUBIC, cv::BORDER_CONSTANT, fill);
  return from_mat(dst);
}

std::string modality_dir(Variant v) {
  switch (v) {
    case Variant::kRgbt: return "infrared";
    case Variant::kRgbd: return "depth";
    case Variant::kRgbe: return "event";
    case Variant::kRgbs: return "sonar";
  }
  return "";
}

Image Frame::load() const {
  if (image) return *image;
  return read_image(path);
}

void SequencePair::validate() const {
  if (rgb.size() != x.size())
    throw IoError(name + ": frame count mismatch, visible has " + std::to_string(rgb.size()) +
                  " and " + modality_dir(variant) + " has " + std::to_string(x.size()));
  if (gt_rgb.size() != rgb.size())
    throw IoError(name + ": ground truth has " + std::to_string(gt_rgb.size()) +
                  " boxes for " + std::to_string(rgb.size()) + " frames");
  if (is_split(variant) && !gt_x) throw IoError(name + ": sonar ground truth missing");
  if (gt_x && gt_x->size() != rgb.size())
    throw IoError(name + ": sonar ground truth has " + std::to_string(gt_x->size()) +
                  " boxes for " + std::to_string(rgb.size()) + " frames");
}

BoundingBox parse_box_line(const std::string& line, std::size_t line_no) {
  auto v = parse_values(line, line_no, "ground truth");
  if (v.size() != 4)
    throw IoError("ground truth line " + std::to_string(line_no) + ": expected 4 values, got " +
                  std::to_string(v.size()));
  return {v[0], v[1], v[2], v[3]};
}

std::vector<BoundingBox> read_boxes(const fs::path& path) {
  std::vector<BoundingBox> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(parse_box_line(lines[i], i + 1));
    } catch (const IoError& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::vector<BoundingBox>> read_result_boxes(const fs::path& path) {
  std::vector<std::vector<BoundingBox>> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto v = parse_values(lines[i], i + 1, path.string());
    if (v.size() != 4 && v.size() != 8)
      throw IoError(path.string() + " line " + std::to_string(i + 1) +
                    ": expected 4 or 8 values, got " + std::to_string(v.size()));
    std::vector<BoundingBox> row;
    for (std::size_t k = 0; k < v.size(); k += 4) row.push_back({v[k], v[k + 1], v[k + 2], v[k + 3]});
    out.push_back(std::move(row));
  }
  return out;
}

void write_result_boxes(const fs::path& path, const std::vector<std::vector<BoundingBox>>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) f << (k ? "," : "") << to_string(row[k]);
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<std::vector<double>> read_confidence(const fs::path& path) {
  std::vector<std::vector<double>> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(parse_values(lines[i], i + 1, path.string()));
  return out;
}

void write_confidence(const fs::path& path, const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(9);
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) f << (k ? "," : "") << row[k];
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

void write_boxes(const fs::path& path, const std::vector<BoundingBox>& boxes) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& b : boxes) f << to_string(b) << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

SequencePair load_sequence(const fs::path& dir, Variant v) {
  SequencePair seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  seq.variant = v;
  for (const auto& p : list_frames(dir / "visible")) seq.rgb.push_back({p, nullptr});
  for (const auto& p : list_frames(dir / modality_dir(v))) seq.x.push_back({p, nullptr});
  seq.gt_rgb = read_boxes(dir / "groundtruth.txt");
  if (is_split(v)) seq.gt_x = read_boxes(dir / "groundtruth_sonar.txt");
  seq.validate();
  if (seq.size() == 0) throw IoError(dir.string() + ": sequence has no frames");
  return seq;
}

void write_sequence(const fs::path& dir, const SequencePair& seq) {
  seq.validate();
  const fs::path vis = dir / "visible", xd = dir / modality_dir(seq.variant);
  fs::create_directories(vis);
  fs::create_directories(xd);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i + 1);
    write_image(vis / name, seq.rgb[i].load());
    write_image(xd / name, seq.x[i].load());
  }
  write_boxes(dir / "groundtruth.txt", seq.gt_rgb);
  if (seq.gt_x) write_boxes(dir / "groundtruth_sonar.txt", *seq.gt_x);
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

bool inside_target(const SynthSpec& spec, double px, double py, const BoundingBox& b) {
  if (!spec.ellipse) return px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h;
  const double dx = (px + 0.5 - b.cx()) / (b.w / 2), dy = (py + 0.5 - b.cy()) / (b.h / 2);
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

SequencePair synth_sequence(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.frames == 0) throw ContractError("synth.frames must be positive");
  if (spec.size_px < 4 || spec.size_px + 2 > std::min(spec.width, spec.height))
    throw ContractError("synth.size_px must be at least 4 and fit inside the frame");
  if (spec.speed_px < 0) throw ContractError("synth.speed_px must be non-negative");
  if (spec.noise < 0) throw ContractError("synth.noise must be non-negative");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t W = spec.width, H = spec.height, S = spec.size_px;

  // Static background: a few soft blobs over mid grey.
  std::vector<double> bg(W * H, 110.0);
  for (int k = 0; k < 12; ++k) {
    const double bx = u(rng) * W, by = u(rng) * H, r = 10 + u(rng) * 40, amp = (u(rng) - 0.5) * 70;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
        bg[y * W + x] += amp * std::exp(-d2 / (2 * r * r));
      }
  }
  // Target texture: checker cells with a random phase.
  const double phase = u(rng) * 8;

  SequencePair seq;
  seq.name = "synth_" + std::to_string(seed);
  seq.variant = spec.variant;
  if (is_split(spec.variant)) seq.gt_x.emplace();

  const double max_x = static_cast<double>(W - S), max_y = static_cast<double>(H - S);
  double px = std::floor(max_x * (0.3 + 0.4 * u(rng))), py = std::floor(max_y * (0.3 + 0.4 * u(rng)));
  double vx = (u(rng) * 2 - 1) * spec.speed_px, vy = (u(rng) * 2 - 1) * spec.speed_px;
  // Sonar view is displaced by a fixed offset.
  const double sdx = 12, sdy = -8;

  for (std::size_t f = 0; f < spec.frames; ++f) {
    if (f > 0) {
      vx = std::clamp(vx + n01(rng) * spec.speed_px * 0.3, -spec.speed_px, spec.speed_px);
      vy = std::clamp(vy + n01(rng) * spec.speed_px * 0.3, -spec.speed_px, spec.speed_px);
      double nx = px + vx, ny = py + vy;
      if (nx < 1 || nx > max_x - 1) vx = -vx, nx = std::clamp(nx, 1.0, max_x - 1);
      if (ny < 1 || ny > max_y - 1) vy = -vy, ny = std::clamp(ny, 1.0, max_y - 1);
      px = nx;
      py = ny;
    }
    const BoundingBox box{std::round(px), std::round(py), double(S), double(S)};
    BoundingBox xbox = box;
    if (is_split(spec.variant)) {
      xbox.x = std::clamp(box.x + sdx, 0.0, max_x);
      xbox.y = std::clamp(box.y + sdy, 0.0, max_y);
    }
    auto rgb = std::make_shared<Image>(W, H);
    auto xim = std::make_shared<Image>(W, H);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double g = bg[y * W + x];
        double r = g, gg = g, b = g;
        if (inside_target(spec, double(x), double(y), box)) {
          const bool cell = (int(std::floor((x - box.x + phase) / 6)) + int(std::floor((y - box.y) / 6))) % 2;
          r = 225;
          gg = cell ? 70 : 150;
          b = 40;
        }
        std::uint8_t* p = rgb->at(x, y);
        p[0] = to_byte(r + n01(rng) * spec.noise * 255);
        p[1] = to_byte(gg + n01(rng) * spec.noise * 255);
        p[2] = to_byte(b + n01(rng) * spec.noise * 255);

        double xv = 255 - g;
        if (inside_target(spec, double(x), double(y), xbox)) {
          const bool cell = (int(std::floor((x - xbox.x + phase) / 6)) + int(std::floor((y - xbox.y) / 6))) % 2;
          xv = cell ? 20 : 45;
        }
        const std::uint8_t q = to_byte(xv + n01(rng) * spec.noise * 255);
        std::uint8_t* t = xim->at(x, y);
        t[0] = t[1] = t[2] = q;
      }
    seq.rgb.push_back({{}, rgb});
    seq.x.push_back({{}, xim});
    seq.gt_rgb.push_back(box);
    if (seq.gt_x) seq.gt_x->push_back(xbox);
  }
  return seq;
}

}  // namespace lfcx
