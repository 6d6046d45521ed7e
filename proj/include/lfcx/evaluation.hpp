#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace lfcx {

enum class Protocol { kOpe, kLongTerm };
Protocol parse_protocol(const std::string& s);

// Scores every sequence directory under `dataset` (a directory holding
// groundtruth.txt) against `<results>/<name>.txt`; the long-term protocol also
// reads `<results>/<name>_confidence.txt`. Result lines with two boxes are
// scored against groundtruth.txt and groundtruth_sonar.txt separately, the
// second under "x". Aggregates are means of per-sequence scores.
nlohmann::json evaluate_results(const std::filesystem::path& results,
                                const std::filesystem::path& dataset, Protocol protocol,
                                std::size_t jobs);

}  // namespace lfcx
