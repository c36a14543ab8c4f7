#include "doublematch/params.hpp"

#include <fmt/format.h>

#include <functional>
#include <numeric>

#include "doublematch/error.hpp"

namespace dm {

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::prediction_head: return "prediction_head";
    case ParamGroup::projection_head: return "projection_head";
  }
  return "?";
}

ParamSlot ParamLayout::add(std::string name, ParamGroup group, std::vector<int> shape) {
  for (const auto& e : entries_)
    if (e.name == name) throw ShapeError(fmt::format("duplicate parameter name '{}'", name));
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  ParamSlot slot{total_, n};
  entries_.push_back({std::move(name), group, slot, std::move(shape)});
  total_ += n;
  return slot;
}

std::size_t ParamLayout::group_size(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.group == g) n += e.slot.size;
  return n;
}

const ParamEntry& ParamLayout::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ShapeError(fmt::format("no parameter named '{}'", name));
}

void ParamLayout::check_partition() const {
  std::vector<int> covered(total_, 0);
  for (const auto& e : entries_)
    for (std::size_t i = 0; i < e.slot.size; ++i) {
      const auto idx = e.slot.offset + i;
      if (idx >= total_ || covered[idx]++ != 0)
        throw ShapeError(fmt::format("parameter '{}' overlaps or exceeds the layout", e.name));
    }
  for (std::size_t i = 0; i < total_; ++i)
    if (covered[i] != 1) throw ShapeError(fmt::format("parameter index {} not covered", i));
}

}  // namespace dm
