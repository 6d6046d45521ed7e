#include "lfcx/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include "lfcx/data_io.hpp"
#include "lfcx/errors.hpp"
#include "lfcx/metrics.hpp"

namespace fs = std::filesystem;

namespace lfcx {

Protocol parse_protocol(const std::string& s) {
  if (s == "ope") return Protocol::kOpe;
  if (s == "longterm") return Protocol::kLongTerm;
  throw ConfigError("unknown protocol '" + s + "' (expected ope or longterm)");
}

namespace {

nlohmann::json score_track(const std::vector<BoundingBox>& pred, const std::vector<double>* conf,
                           const std::vector<BoundingBox>& gt) {
  if (!conf) {
    const auto s = metrics::ope(pred, gt);
    return {{"PR", s.pr}, {"NPR", s.npr}, {"SR", s.sr}};
  }
  const auto s = metrics::f_score(pred, *conf, gt);
  return {{"F", s.f}, {"Pr", s.pr}, {"Re", s.re}, {"threshold", s.threshold}};
}

nlohmann::json score_sequence(const fs::path& results, const fs::path& seq_dir, Protocol protocol) {
  const std::string name = seq_dir.filename().string();
  const auto rows = read_result_boxes(results / (name + ".txt"));
  std::vector<std::vector<BoundingBox>> gts{read_boxes(seq_dir / "groundtruth.txt")};
  if (fs::exists(seq_dir / "groundtruth_sonar.txt"))
    gts.push_back(read_boxes(seq_dir / "groundtruth_sonar.txt"));

  std::vector<std::vector<double>> conf_rows;
  if (protocol == Protocol::kLongTerm) {
    const fs::path cp = results / (name + "_confidence.txt");
    if (!fs::exists(cp)) throw ContractError(name + ": long-term evaluation needs " + cp.string());
    conf_rows = read_confidence(cp);
    if (conf_rows.size() != rows.size())
      throw ContractError(name + ": " + std::to_string(conf_rows.size()) + " confidence lines for " +
                          std::to_string(rows.size()) + " result lines");
  }

  const std::size_t tracks = rows.empty() ? 1 : rows[0].size();
  if (tracks > gts.size())
    throw ContractError(name + ": two boxes per line but no groundtruth_sonar.txt");
  nlohmann::json out{{"name", name}, {"frames", rows.size()}};
  for (std::size_t k = 0; k < tracks; ++k) {
    std::vector<BoundingBox> pred;
    std::vector<double> conf;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != tracks) throw ContractError(name + ": mixed 4- and 8-value result lines");
      pred.push_back(rows[i][k]);
      if (protocol == Protocol::kLongTerm) {
        if (conf_rows[i].size() != 1 && conf_rows[i].size() != tracks)
          throw ContractError(name + ": confidence line " + std::to_string(i + 1) +
                              " has the wrong number of values");
        conf.push_back(conf_rows[i][std::min(k, conf_rows[i].size() - 1)]);
      }
    }
    nlohmann::json s = score_track(pred, protocol == Protocol::kLongTerm ? &conf : nullptr, gts[k]);
    if (k == 0) out.update(s);
    else out["x"] = s;
  }
  return out;
}

nlohmann::json mean_of(const std::vector<const nlohmann::json*>& items) {
  nlohmann::json out = nlohmann::json::object();
  if (items.empty()) return out;
  for (const auto& [key, value] : items.front()->items()) {
    if (!value.is_number_float() || key == "threshold") continue;
    double sum = 0;
    for (const auto* j : items) sum += (*j)[key].get<double>();
    out[key] = sum / static_cast<double>(items.size());
  }
  return out;
}

}  // namespace

nlohmann::json evaluate_results(const fs::path& results, const fs::path& dataset, Protocol protocol,
                                std::size_t jobs) {
  if (!fs::is_directory(dataset)) throw IoError("dataset directory not found: " + dataset.string());
  if (!fs::is_directory(results)) throw IoError("results directory not found: " + results.string());
  std::vector<fs::path> seqs;
  for (const auto& e : fs::directory_iterator(dataset))
    if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) seqs.push_back(e.path());
  std::sort(seqs.begin(), seqs.end());
  if (seqs.empty()) throw IoError("no sequences with groundtruth.txt under " + dataset.string());

  std::vector<nlohmann::json> per(seqs.size());
  std::vector<std::exception_ptr> errors(seqs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seqs.size();) {
      try {
        per[i] = score_sequence(results, seqs[i], protocol);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::clamp<std::size_t>(jobs, 1, seqs.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<const nlohmann::json*> main, second;
  for (const auto& j : per) {
    main.push_back(&j);
    if (j.contains("x")) second.push_back(&j["x"]);
  }
  nlohmann::json agg = mean_of(main);
  if (!second.empty()) agg["x"] = mean_of(second);
  return {{"protocol", protocol == Protocol::kOpe ? "ope" : "longterm"},
          {"sequences", per},
          {"aggregate", agg}};
}

}  // namespace lfcx
