#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xbprune/tensor.hpp"

namespace xbprune {

// NumPy .npy files: little-endian float32/float64, C order. Version 1.0
// headers are written; 1.0 and 2.0 headers are read.
Tensor load_tensor(const std::filesystem::path& path);
void save_tensor(const Tensor& t, const std::filesystem::path& path);

Tensor parse_npy(const std::vector<char>& bytes, const std::string& origin);
std::vector<char> serialize_npy(const Tensor& t);

// NumPy .npz archives (zip of .npy members). Reading supports stored and
// deflated members; writing stores members uncompressed. Keys drop the
// ".npy" suffix, as numpy does.
std::map<std::string, Tensor> load_npz(const std::filesystem::path& path);
void save_npz(const std::map<std::string, Tensor>& arrays, const std::filesystem::path& path);

}  // namespace xbprune
