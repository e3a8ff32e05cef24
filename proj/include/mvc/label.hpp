#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace mvc {

enum class TaskMode { single_label, multi_label };

// A class index (single-label tasks) or a multi-hot vector (multi-label).
using Label = std::variant<std::size_t, std::vector<std::uint8_t>>;

std::string to_string(TaskMode mode);
TaskMode task_mode_from_string(const std::string& s);

}  // namespace mvc
