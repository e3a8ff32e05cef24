#pragma once

#include <filesystem>

#include "mvc/tensor.hpp"

namespace mvc {

// Tensor on disk: `<stem>.bin` holds the raw little-endian values and
// `<stem>.json` the sidecar {"shape": [...], "dtype": "f32" | "f64"}.
template <typename T>
void save_tensor(const std::filesystem::path& stem, const Tensor<T>& t);

// Loads either dtype and converts to T. Throws FormatError subclasses on a
// malformed sidecar, a size mismatch or an unknown dtype.
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& stem);

}  // namespace mvc
