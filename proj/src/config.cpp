#include "lfcx/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "lfcx/errors.hpp"

namespace lfcx {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true/false or on/off, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

using Setter = std::function<void(Settings&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto size = [&](const char* k, auto field) {
      t[k] = [field](Settings& s, const std::string& key, const std::string& v) {
        field(s) = to_size(key, v);
      };
    };
    auto real = [&](const char* k, auto field) {
      t[k] = [field](Settings& s, const std::string& key, const std::string& v) {
        field(s) = to_double(key, v);
      };
    };
    auto flag = [&](const char* k, auto field) {
      t[k] = [field](Settings& s, const std::string& key, const std::string& v) {
        field(s) = to_bool(key, v);
      };
    };
    t["seed"] = [](Settings& s, const std::string& key, const std::string& v) {
      s.model.seed = s.train.seed = to_size(key, v);
    };
    t["model.variant"] = [](Settings& s, const std::string&, const std::string& v) {
      s.model.variant = s.synth.variant = parse_variant(v);
    };
    size("model.ecam_depth", [](Settings& s) -> auto& { return s.model.ecam_depth; });
    flag("model.stam", [](Settings& s) -> auto& { return s.model.with_stam; });
    flag("model.stam_tie_branches", [](Settings& s) -> auto& { return s.model.stam_tie_branches; });
    t["model.head_widths"] = [](Settings& s, const std::string& key, const std::string& v) {
      s.model.head_widths = to_sizes(key, v);
    };
    t["backbone.widths"] = [](Settings& s, const std::string& key, const std::string& v) {
      s.model.backbone.widths = to_sizes(key, v);
    };
    flag("backbone.share_across_modalities",
         [](Settings& s) -> auto& { return s.model.backbone.share_across_modalities; });
    real("backbone.mean", [](Settings& s) -> auto& { return s.model.backbone.mean; });
    real("backbone.std", [](Settings& s) -> auto& { return s.model.backbone.std; });

    size("tracker.template_size", [](Settings& s) -> auto& { return s.tracker.template_size; });
    size("tracker.search_size", [](Settings& s) -> auto& { return s.tracker.search_size; });
    real("tracker.template_factor", [](Settings& s) -> auto& { return s.tracker.template_factor; });
    real("tracker.search_factor", [](Settings& s) -> auto& { return s.tracker.search_factor; });
    size("tracker.update_interval", [](Settings& s) -> auto& { return s.tracker.update_interval; });
    real("tracker.update_threshold", [](Settings& s) -> auto& { return s.tracker.update_threshold; });
    real("tracker.window_influence", [](Settings& s) -> auto& { return s.tracker.window_influence; });
    flag("tracker.stam_enabled", [](Settings& s) -> auto& { return s.tracker.stam_enabled; });

    t["train.phase"] = [](Settings& s, const std::string& key, const std::string& v) {
      s.train.phase = static_cast<int>(to_size(key, v));
    };
    size("train.steps", [](Settings& s) -> auto& { return s.train.steps; });
    size("train.batch", [](Settings& s) -> auto& { return s.train.batch; });
    real("train.lr", [](Settings& s) -> auto& { return s.train.optim.lr; });
    real("train.beta1", [](Settings& s) -> auto& { return s.train.optim.beta1; });
    real("train.beta2", [](Settings& s) -> auto& { return s.train.optim.beta2; });
    real("train.eps", [](Settings& s) -> auto& { return s.train.optim.eps; });
    real("train.weight_decay", [](Settings& s) -> auto& { return s.train.optim.weight_decay; });
    size("train.decay_epoch", [](Settings& s) -> auto& { return s.train.decay_epoch; });
    size("train.steps_per_epoch", [](Settings& s) -> auto& { return s.train.steps_per_epoch; });
    size("train.pairs", [](Settings& s) -> auto& { return s.train.pairs; });
    size("train.max_gap", [](Settings& s) -> auto& { return s.train.max_gap; });
    real("train.center_jitter", [](Settings& s) -> auto& { return s.train.center_jitter; });
    real("train.scale_jitter", [](Settings& s) -> auto& { return s.train.scale_jitter; });
    real("train.loss_iou", [](Settings& s) -> auto& { return s.train.loss.iou; });
    real("train.loss_l1", [](Settings& s) -> auto& { return s.train.loss.l1; });

    size("synth.frames", [](Settings& s) -> auto& { return s.synth.frames; });
    size("synth.width", [](Settings& s) -> auto& { return s.synth.width; });
    size("synth.height", [](Settings& s) -> auto& { return s.synth.height; });
    real("synth.speed_px", [](Settings& s) -> auto& { return s.synth.speed_px; });
    size("synth.size_px", [](Settings& s) -> auto& { return s.synth.size_px; });
    real("synth.noise", [](Settings& s) -> auto& { return s.synth.noise; });
    flag("synth.ellipse", [](Settings& s) -> auto& { return s.synth.ellipse; });
    return t;
  }();
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(no) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(no) + ": empty key or value");
    if (!kv.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(no) + ": duplicate key '" + key + "'");
  }
  return kv;
}

void apply_config(Settings& s, const std::map<std::string, std::string>& kv) {
  const auto& table = setters();
  for (const auto& [key, value] : kv) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(s, key, value);
  }
}

void load_config(Settings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config(s, parse_config(buf.str()));
}

std::string config_text(const Settings& s) {
  std::ostringstream o;
  // Shortest text that reads back to the same double.
  auto d = [](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  auto list = [](const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  };
  auto b = [](bool v) { return v ? "true" : "false"; };
  const auto& m = s.model;
  const auto& t = s.tracker;
  const auto& r = s.train;
  const auto& y = s.synth;
  o << "seed = " << m.seed << "\n"
    << "model.variant = " << to_string(m.variant) << "\n"
    << "model.ecam_depth = " << m.ecam_depth << "\n"
    << "model.stam = " << b(m.with_stam) << "\n"
    << "model.stam_tie_branches = " << b(m.stam_tie_branches) << "\n"
    << "model.head_widths = " << list(m.head_widths) << "\n"
    << "backbone.widths = " << list(m.backbone.widths) << "\n"
    << "backbone.share_across_modalities = " << b(m.backbone.share_across_modalities) << "\n"
    << "backbone.mean = " << d(m.backbone.mean) << "\n"
    << "backbone.std = " << d(m.backbone.std) << "\n"
    << "tracker.template_size = " << t.template_size << "\n"
    << "tracker.search_size = " << t.search_size << "\n"
    << "tracker.template_factor = " << d(t.template_factor) << "\n"
    << "tracker.search_factor = " << d(t.search_factor) << "\n"
    << "tracker.update_interval = " << t.update_interval << "\n"
    << "tracker.update_threshold = " << d(t.update_threshold) << "\n"
    << "tracker.window_influence = " << d(t.window_influence) << "\n"
    << "tracker.stam_enabled = " << b(t.stam_enabled) << "\n"
    << "train.phase = " << r.phase << "\n"
    << "train.steps = " << r.steps << "\n"
    << "train.batch = " << r.batch << "\n"
    << "train.lr = " << d(r.optim.lr) << "\n"
    << "train.beta1 = " << d(r.optim.beta1) << "\n"
    << "train.beta2 = " << d(r.optim.beta2) << "\n"
    << "train.eps = " << d(r.optim.eps) << "\n"
    << "train.weight_decay = " << d(r.optim.weight_decay) << "\n"
    << "train.decay_epoch = " << r.decay_epoch << "\n"
    << "train.steps_per_epoch = " << r.steps_per_epoch << "\n"
    << "train.pairs = " << r.pairs << "\n"
    << "train.max_gap = " << r.max_gap << "\n"
    << "train.center_jitter = " << d(r.center_jitter) << "\n"
    << "train.scale_jitter = " << d(r.scale_jitter) << "\n"
    << "train.loss_iou = " << d(r.loss.iou) << "\n"
    << "train.loss_l1 = " << d(r.loss.l1) << "\n"
    << "synth.frames = " << y.frames << "\n"
    << "synth.width = " << y.width << "\n"
    << "synth.height = " << y.height << "\n"
    << "synth.speed_px = " << d(y.speed_px) << "\n"
    << "synth.size_px = " << y.size_px << "\n"
    << "synth.noise = " << d(y.noise) << "\n"
    << "synth.ellipse = " << b(y.ellipse) << "\n";
  return o.str();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

}  // namespace lfcx
