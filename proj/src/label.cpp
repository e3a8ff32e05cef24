#include "mvc/label.hpp"

#include "mvc/error.hpp"

namespace mvc {

std::string to_string(TaskMode mode) {
  return mode == TaskMode::single_label ? "single_label" : "multi_label";
}

TaskMode task_mode_from_string(const std::string& s) {
  if (s == "single_label") return TaskMode::single_label;
  if (s == "multi_label") return TaskMode::multi_label;
  throw UsageError("unknown task mode '" + s + "'");
}

}  // namespace mvc
