#pragma once

// Piecewise-constant time profiles loaded from CSV. Used for the daily load
// multiplier (optionally tagged with a segment label per step, e.g. light and
// heavy tariff periods) and for available photovoltaic power.
//
// Format: an optional header line, then one row per step:
//   time_s,value[,label]
// Rows must be sorted by time. The value holds from its time up to the next
// row's time; queries before the first row return the first value.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vvsim/util.hpp"

namespace vvsim {

struct ProfileStep {
  double t_s = 0.0;
  double value = 0.0;
  std::string label;

  bool operator==(const ProfileStep&) const = default;
};

class StepProfile {
 public:
  StepProfile() = default;
  explicit StepProfile(std::vector<ProfileStep> steps) : steps_(std::move(steps)) {
    for (size_t i = 1; i < steps_.size(); ++i)
      if (steps_[i].t_s <= steps_[i - 1].t_s)
        throw ValidationError("profile steps must be strictly increasing in time");
  }

  bool empty() const { return steps_.empty(); }
  const std::vector<ProfileStep>& steps() const { return steps_; }

  const ProfileStep& step_at(double t_s) const {
    if (steps_.empty()) throw ValidationError("profile has no steps");
    auto it = std::upper_bound(
        steps_.begin(), steps_.end(), t_s,
        [](double t, const ProfileStep& s) { return t < s.t_s; });
    if (it == steps_.begin()) return steps_.front();
    return *std::prev(it);
  }

  double value_at(double t_s) const { return step_at(t_s).value; }
  const std::string& label_at(double t_s) const { return step_at(t_s).label; }

  // Distinct labels in first-appearance order.
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& s : steps_)
      if (!s.label.empty() &&
          std::find(out.begin(), out.end(), s.label) == out.end())
        out.push_back(s.label);
    return out;
  }

 private:
  std::vector<ProfileStep> steps_;
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    size_t b = cell.find_first_not_of(" \t\r");
    size_t e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return cells;
}

inline bool parse_double(const std::string& s, double& out) {
  try {
    size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

}  // namespace detail

inline StepProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::vector<ProfileStep> steps;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_row(line);
    if (cells.empty() || (cells.size() == 1 && cells[0].empty())) continue;
    double t, v;
    if (!detail::parse_double(cells[0], t)) {
      if (steps.empty()) continue;  // header row
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": bad time value '" + cells[0] + "'");
    }
    if (cells.size() < 2 || !detail::parse_double(cells[1], v))
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": bad or missing value column");
    ProfileStep s;
    s.t_s = t;
    s.value = v;
    if (cells.size() >= 3) s.label = cells[2];
    steps.push_back(std::move(s));
  }
  if (steps.empty()) throw ParseError(path + ": no profile rows");
  try {
    return StepProfile(std::move(steps));
  } catch (const ValidationError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void save_profile(const StepProfile& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  bool labeled = false;
  for (const auto& s : p.steps())
    if (!s.label.empty()) labeled = true;
  out << (labeled ? "time_s,value,label\n" : "time_s,value\n");
  for (const auto& s : p.steps()) {
    out << fmt_g(s.t_s) << "," << fmt_g(s.value);
    if (labeled) out << "," << s.label;
    out << "\n";
  }
}

}  // namespace vvsim
