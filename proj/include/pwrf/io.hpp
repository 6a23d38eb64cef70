#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pwrf/tensor.hpp"

namespace pwrf::io {

// Tensor dump format: a one-line JSON header {"shape":[...]}\n followed by
// the raw little-endian float64 payload in row-major order. Used by the CLI
// checkpoints and cross-language golden tests.
std::vector<unsigned char> dump_tensor(const Tensor& t);
Tensor parse_tensor(const std::vector<unsigned char>& bytes);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// 8-bit binary PGM (P5). Values are bytes; callers map their data range.
void save_pgm(const std::filesystem::path& path, std::int64_t H, std::int64_t W,
              const std::vector<unsigned char>& bytes);

void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace pwrf::io
