#pragma once

#include <map>
#include <string>

#include "lfcx/data_io.hpp"
#include "lfcx/model.hpp"
#include "lfcx/tracker.hpp"
#include "lfcx/trainer.hpp"

namespace lfcx {

// Everything a run can be configured with. Defaults are the struct defaults;
// a config file overrides them and command-line flags override the file.
struct Settings {
  ModelConfig model;
  TrackerConfig tracker;
  TrainConfig train;
  SynthSpec synth;
};

// Flat `key = value` lines; `#` starts a comment. Duplicate keys and
// malformed lines are errors naming the line.
std::map<std::string, std::string> parse_config(const std::string& text);

// Unknown keys and unparsable values throw ConfigError.
void apply_config(Settings& s, const std::map<std::string, std::string>& kv);

// Reads and applies a file; IoError if it cannot be read.
void load_config(Settings& s, const std::string& path);

// All keys with their current values, in the format parse_config reads.
std::string config_text(const Settings& s);

// Every accepted key, for help output and the documentation test.
const std::vector<std::string>& config_keys();

}  // namespace lfcx
