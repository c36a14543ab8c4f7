#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dm {

// Which part of the network a trainable parameter belongs to.
enum class ParamGroup { backbone, prediction_head, projection_head };

std::string_view to_string(ParamGroup g);

struct ParamSlot {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ParamEntry {
  std::string name;
  ParamGroup group;
  ParamSlot slot;
  std::vector<int> shape;
};

// Named, contiguous layout of a flat parameter (or buffer) vector.
class ParamLayout {
 public:
  ParamSlot add(std::string name, ParamGroup group, std::vector<int> shape);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t total() const { return total_; }
  std::size_t group_size(ParamGroup g) const;
  const ParamEntry& find(std::string_view name) const;

  // Throws unless the entries tile [0, total) exactly once.
  void check_partition() const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

}  // namespace dm
