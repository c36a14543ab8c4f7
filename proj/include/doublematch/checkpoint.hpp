#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dm {

// Binary archive of named float arrays plus string metadata. Used for
// training checkpoints; see trainer.hpp for the names it writes.
struct Archive {
  std::map<std::string, std::string> meta;
  std::map<std::string, std::vector<float>> arrays;

  const std::string& get_meta(const std::string& key) const;
  const std::vector<float>& get_array(const std::string& key) const;
};

// Written to a temporary file and renamed into place.
void save_archive(const Archive& archive, const std::filesystem::path& path);
Archive load_archive(const std::filesystem::path& path);

}  // namespace dm
