#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "doublematch/image.hpp"
#include "doublematch/tensor.hpp"

namespace dm {

struct TrainConfig;

// Images quantized to 8 bits, stored N x H x W x C.
struct ImageSet {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;  // -1 marks an unlabeled image

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return static_cast<std::size_t>(height) * width * channels; }
  Image image(std::size_t i) const;
  void append(const Image& img, int label);
};

struct Dataset {
  std::string name;
  int num_classes = 0;
  ImageSet train;
  ImageSet test;
  ImageSet extra_unlabeled;  // STL-10's unlabeled split, or synthetic distractors
  std::vector<float> channel_mean;

  // Unlabeled-pool indices address train first, then extra_unlabeled.
  std::size_t pool_size() const { return train.size() + extra_unlabeled.size(); }
  Image pool_image(std::size_t index) const;
};

std::vector<float> channel_mean(const ImageSet& set);

struct SyntheticOptions {
  int num_classes = 3;  // triangle, square, disc
  int train_size = 6000;
  int test_size = 1500;
  int image_size = 32;
  std::uint64_t seed = 0;
  bool distractor = false;  // add a fourth shape to the unlabeled pool only
  int distractor_size = 0;  // 0 selects train_size / num_classes
};

// Procedurally rendered shapes; labels cycle through the classes so both
// partitions are exactly balanced.
Dataset make_synthetic_dataset(const SyntheticOptions& opts);

// Published binary layouts: cifar-10-batches-bin, cifar-100-binary,
// {train,test}_32x32.mat (SVHN) and stl10_binary.
Dataset load_dataset(const std::string& name, const std::filesystem::path& root);

// Dispatches on cfg.dataset; `synthetic` needs no root.
Dataset load_dataset_for(const TrainConfig& cfg, const std::filesystem::path& root);

bool dataset_needs_root(const std::string& name);

struct LabeledSplit {
  std::vector<std::size_t> labeled_indices;  // sorted, unique, into Dataset::train
  std::uint64_t fold_seed = 0;
  std::vector<int> per_class;
};

LabeledSplit make_split(const Dataset& dataset, int num_labels, std::uint64_t fold_seed);
void save_split(const LabeledSplit& split, const std::filesystem::path& path);
LabeledSplit load_split(const std::filesystem::path& path, int num_classes, const Dataset& dataset);

// Pool indices (see Dataset::pool_image). With include_labeled the labeled
// images are part of the pool as well.
std::vector<std::size_t> unlabeled_pool(const Dataset& dataset, const LabeledSplit& split, bool include_labeled);

struct BatchIndices {
  std::int64_t step = 0;
  std::vector<std::size_t> labeled;    // into Dataset::train
  std::vector<std::size_t> unlabeled;  // pool indices
};

// Infinite shuffled streams over the labeled set and the unlabeled pool.
// Each stream walks through per-epoch permutations independently, and the
// batch for step k is a pure function of (seed, k).
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled, int batch_size, int mu,
              std::uint64_t seed);

  BatchIndices at(std::int64_t step);
  BatchIndices next() { return at(position_++); }
  void seek(std::int64_t step) { position_ = step; }
  std::int64_t position() const { return position_; }

 private:
  struct Stream {
    std::vector<std::size_t> items;
    std::uint64_t seed = 0;
    std::map<std::int64_t, std::vector<std::size_t>> cache;
    const std::vector<std::size_t>& epoch(std::int64_t e);
    std::size_t item(std::int64_t position);
  };

  Stream labeled_;
  Stream unlabeled_;
  int batch_size_;
  int unlabeled_batch_;
  std::int64_t position_ = 0;
};

struct SslBatch {
  std::int64_t step = 0;
  std::vector<Image> labeled;
  std::vector<int> labels;
  std::vector<Image> unlabeled;
};

SslBatch assemble_batch(const Dataset& dataset, const BatchIndices& indices);

// N x C x H x W tensor from interleaved images of identical shape.
Tensor<float> to_tensor(std::span<const Image> images);

}  // namespace dm
