#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "spms/csv.hpp"

namespace spms::pet {

/// Frame end-times t_0 < t_1 < ... < t_k in seconds; t_0 is the start of the
/// first frame, frames i = 1..k end at t_i with duration t_i - t_{i-1}.
struct FrameSchedule {
  std::vector<double> ends;  // includes t_0 at index 0

  explicit FrameSchedule(std::vector<double> end_times)
      : ends(std::move(end_times)) {
    if (ends.size() < 2)
      throw std::invalid_argument("schedule needs at least one frame");
    for (size_t i = 1; i < ends.size(); ++i)
      if (ends[i] <= ends[i - 1])
        throw std::invalid_argument("frame end-times must be strictly increasing");
  }

  int frame_count() const { return static_cast<int>(ends.size()) - 1; }
  double frame_end(int i) const { return ends.at(static_cast<size_t>(i + 1)); }
  double duration(int i) const {
    return ends.at(static_cast<size_t>(i + 1)) - ends.at(static_cast<size_t>(i));
  }
  double total_end() const { return ends.back(); }
};

/// Builds a schedule starting at t_0 = 0 from a list of frame durations.
inline FrameSchedule schedule_from_durations(const std::vector<double>& durations) {
  std::vector<double> ends{0.0};
  for (double d : durations) ends.push_back(ends.back() + d);
  return FrameSchedule(std::move(ends));
}

/// CSV with header `t_end_s`, one row per frame end t_1..t_k; t_0 = 0.
inline FrameSchedule load_frame_schedule(const std::string& path) {
  auto rows = read_csv(path, "t_end_s");
  std::vector<double> ends{0.0};
  for (const auto& r : rows) ends.push_back(std::stod(r.at(0)));
  return FrameSchedule(std::move(ends));
}

inline void save_frame_schedule(const FrameSchedule& sched,
                                const std::string& path,
                                const std::string& comment = "") {
  CsvWriter csv(path, "t_end_s");
  if (!comment.empty()) csv.comment(comment);
  for (int i = 0; i < sched.frame_count(); ++i) csv.row(sched.frame_end(i));
}

}  // namespace spms::pet
