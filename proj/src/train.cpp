#include "tse/train.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tse {

std::string EvalReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"task", r.task},     {"cue", r.cue},
                       {"scenes", r.scenes}, {"supported", r.supported}};
    if (r.supported) {
      row["mean_si_sdr_db"] = r.mean_si_sdr;
      row["mean_si_sdri_db"] = r.mean_si_sdri;
      row["selector_accuracy"] = r.selector_accuracy;
    }
    arr.push_back(std::move(row));
  }
  return arr.dump(2);
}

std::string EvalReport::to_table() const {
  // columns = tasks, rows = cue configurations; cell = SI-SDR (SI-SDRi)
  std::vector<std::string> tasks, cues;
  for (const auto& r : rows) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    if (std::find(cues.begin(), cues.end(), r.cue) == cues.end()) cues.push_back(r.cue);
  }
  auto cell = [&](const std::string& task, const std::string& cue) -> std::string {
    const EvalRow* r = find(task, cue);
    if (!r) return "-";
    if (!r->supported) return "no support";
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << r->mean_si_sdr << " (" << std::showpos
       << r->mean_si_sdri << ")" << std::noshowpos;
    return ss.str();
  };

  const std::size_t head = 14;
  std::vector<std::size_t> widths;
  for (const auto& t : tasks) {
    std::size_t w = t.size();
    for (const auto& c : cues) w = std::max(w, cell(t, c).size());
    widths.push_back(w + 2);
  }

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(head)) << "cue \\ task";
  for (std::size_t i = 0; i < tasks.size(); ++i)
    out << std::setw(static_cast<int>(widths[i])) << tasks[i];
  out << "\n";
  out << std::string(head + std::accumulate(widths.begin(), widths.end(), std::size_t{0}), '-')
      << "\n";
  for (const auto& c : cues) {
    out << std::left << std::setw(static_cast<int>(head)) << c;
    for (std::size_t i = 0; i < tasks.size(); ++i)
      out << std::setw(static_cast<int>(widths[i])) << cell(tasks[i], c);
    out << "\n";
  }
  out << "cells: mean SI-SDR dB (mean SI-SDRi dB)\n";
  return out.str();
}

}  // namespace tse
