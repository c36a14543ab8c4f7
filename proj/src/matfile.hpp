#pragma once

// Minimal reader for MATLAB level-5 MAT files (numeric arrays only), enough
// for the SVHN cropped-digit files. Handles zlib-compressed elements.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dm::mat {

struct Array {
  std::vector<int> dims;
  int type = 0;  // miUINT8, miDOUBLE, ...
  std::vector<std::uint8_t> raw;

  std::size_t count() const;
  double value(std::size_t i) const;
  const std::uint8_t* bytes() const { return raw.data(); }
};

std::map<std::string, Array> read(const std::filesystem::path& path);

}  // namespace dm::mat
