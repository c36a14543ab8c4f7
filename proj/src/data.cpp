#include "doublematch/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "doublematch/config.hpp"
#include "doublematch/error.hpp"
#include "doublematch/rng.hpp"
#include "matfile.hpp"

namespace fs = std::filesystem;

namespace dm {

Image ImageSet::image(std::size_t i) const {
  Image img(height, width, channels);
  const std::uint8_t* src = pixels.data() + i * image_bytes();
  for (std::size_t j = 0; j < img.pixels.size(); ++j) img.pixels[j] = src[j] / 255.0f;
  return img;
}

void ImageSet::append(const Image& img, int label) {
  if (size() == 0 && pixels.empty()) {
    height = img.height;
    width = img.width;
    channels = img.channels;
  } else if (img.height != height || img.width != width || img.channels != channels) {
    throw ShapeError("ImageSet::append: image shape differs from the set");
  }
  for (float v : img.pixels)
    pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  labels.push_back(label);
}

Image Dataset::pool_image(std::size_t index) const {
  if (index < train.size()) return train.image(index);
  return extra_unlabeled.image(index - train.size());
}

std::vector<float> channel_mean(const ImageSet& set) {
  std::vector<double> acc(static_cast<std::size_t>(set.channels), 0.0);
  for (std::size_t i = 0; i < set.pixels.size(); ++i) acc[i % acc.size()] += set.pixels[i];
  std::vector<float> mean(acc.size());
  const double n = static_cast<double>(set.pixels.size() / std::max<std::size_t>(1, acc.size()));
  for (std::size_t c = 0; c < acc.size(); ++c) mean[c] = static_cast<float>(acc[c] / std::max(1.0, n) / 255.0);
  return mean;
}

// ------------------------------------------------------------ synthetic

namespace {

struct ShapeParams {
  double cx, cy, radius, angle;
};

bool inside_shape(int shape, const ShapeParams& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  const double u = ca * dx + sa * dy;
  const double v = -sa * dx + ca * dy;
  const double r = s.radius;
  switch (shape) {
    case 0: {  // equilateral triangle with circumradius r
      for (int k = 0; k < 3; ++k) {
        const double t = 2.0 * std::numbers::pi * k / 3.0;
        // Edge normal pointing away from the centre at distance r/2.
        if (std::cos(t) * u + std::sin(t) * v > r / 2.0) return false;
      }
      return true;
    }
    case 1: return std::abs(u) <= r / std::numbers::sqrt2 && std::abs(v) <= r / std::numbers::sqrt2;
    case 2: return u * u + v * v <= r * r;
    default: {  // distractor: plus sign
      const double arm = 0.3 * r;
      return (std::abs(u) <= arm && std::abs(v) <= r) || (std::abs(v) <= arm && std::abs(u) <= r);
    }
  }
}

Image render_shape(int shape, int size, Rng& rng) {
  // Dark background, bright shape, each with a small random tint.
  const double bg_level = uniform(rng, 0.0, 0.35);
  const double fg_level = uniform(rng, 0.6, 1.0);
  std::array<float, 3> bg{}, fg{};
  for (auto& c : bg) c = static_cast<float>(bg_level + uniform(rng, -0.1, 0.1));
  for (auto& c : fg) c = static_cast<float>(fg_level + uniform(rng, -0.1, 0.1));
  ShapeParams s;
  s.radius = uniform(rng, 0.3, 0.45) * size;
  s.cx = uniform(rng, s.radius, size - s.radius);
  s.cy = uniform(rng, s.radius, size - s.radius);
  s.angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.04);
  Image img(size, size, 3);
  constexpr int kSub = 3;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx)
          hits += inside_shape(shape, s, x + (sx + 0.5) / kSub, y + (sy + 0.5) / kSub);
      const float a = static_cast<float>(hits) / (kSub * kSub);
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = std::clamp(bg[c] * (1 - a) + fg[c] * a + static_cast<float>(noise(rng)), 0.0f, 1.0f);
    }
  return img;
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticOptions& opts) {
  if (opts.num_classes < 1 || opts.num_classes > 3)
    throw ConfigError("synthetic dataset supports 1 to 3 classes");
  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = opts.num_classes;
  Rng train_rng = make_rng(opts.seed, "synthetic-train");
  for (int i = 0; i < opts.train_size; ++i) {
    const int label = i % opts.num_classes;
    ds.train.append(render_shape(label, opts.image_size, train_rng), label);
  }
  Rng test_rng = make_rng(opts.seed, "synthetic-test");
  for (int i = 0; i < opts.test_size; ++i) {
    const int label = i % opts.num_classes;
    ds.test.append(render_shape(label, opts.image_size, test_rng), label);
  }
  if (opts.distractor) {
    Rng extra_rng = make_rng(opts.seed, "synthetic-distractor");
    const int n = opts.distractor_size > 0 ? opts.distractor_size : opts.train_size / opts.num_classes;
    for (int i = 0; i < n; ++i) ds.extra_unlabeled.append(render_shape(3, opts.image_size, extra_rng), -1);
  }
  ds.channel_mean = channel_mean(ds.train);
  return ds;
}

// ----------------------------------------------------- published formats

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path, const std::string& hint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("missing dataset file '{}' ({})", path.string(), hint));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path first_existing(const fs::path& root, std::initializer_list<const char*> subdirs, const char* file) {
  for (const char* sub : subdirs) {
    fs::path p = root / sub / file;
    if (fs::exists(p)) return p;
  }
  return root / *subdirs.begin() / file;
}

// Record = label byte(s) + 3 planes of 32x32.
void append_cifar_records(ImageSet& set, const std::vector<std::uint8_t>& buf, int label_bytes, int label_index,
                          const fs::path& path) {
  constexpr std::size_t kPlane = 32 * 32;
  const std::size_t record = label_bytes + 3 * kPlane;
  if (buf.empty() || buf.size() % record != 0)
    throw DataError(fmt::format("'{}' is not a CIFAR binary file ({} bytes, record size {})", path.string(),
                                buf.size(), record));
  set.height = set.width = 32;
  set.channels = 3;
  for (std::size_t off = 0; off < buf.size(); off += record) {
    set.labels.push_back(buf[off + label_index]);
    const std::uint8_t* planes = buf.data() + off + label_bytes;
    for (std::size_t p = 0; p < kPlane; ++p)
      for (int c = 0; c < 3; ++c) set.pixels.push_back(planes[c * kPlane + p]);
  }
}

Dataset load_cifar10(const fs::path& root) {
  Dataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  const char* hint = "expected cifar-10-batches-bin/ under --data-root";
  for (int b = 1; b <= 5; ++b) {
    const auto p = first_existing(root, {"cifar-10-batches-bin", "."}, fmt::format("data_batch_{}.bin", b).c_str());
    append_cifar_records(ds.train, read_file(p, hint), 1, 0, p);
  }
  const auto p = first_existing(root, {"cifar-10-batches-bin", "."}, "test_batch.bin");
  append_cifar_records(ds.test, read_file(p, hint), 1, 0, p);
  return ds;
}

Dataset load_cifar100(const fs::path& root) {
  Dataset ds;
  ds.name = "cifar100";
  ds.num_classes = 100;
  const char* hint = "expected cifar-100-binary/ under --data-root";
  const auto tr = first_existing(root, {"cifar-100-binary", "."}, "train.bin");
  append_cifar_records(ds.train, read_file(tr, hint), 2, 1, tr);
  const auto te = first_existing(root, {"cifar-100-binary", "."}, "test.bin");
  append_cifar_records(ds.test, read_file(te, hint), 2, 1, te);
  return ds;
}

ImageSet load_svhn_split(const fs::path& path) {
  if (!fs::exists(path))
    throw DataError(fmt::format("missing dataset file '{}' (expected the cropped-digit .mat files)", path.string()));
  auto arrays = mat::read(path);
  if (!arrays.count("X") || !arrays.count("y")) throw DataError(fmt::format("'{}' lacks X or y", path.string()));
  const auto& x = arrays.at("X");
  const auto& y = arrays.at("y");
  if (x.dims.size() != 4 || x.dims[0] != 32 || x.dims[1] != 32 || x.dims[2] != 3 || x.type != 2)
    throw DataError(fmt::format("'{}': X must be a 32x32x3xN uint8 array", path.string()));
  const std::size_t n = static_cast<std::size_t>(x.dims[3]);
  if (y.count() != n) throw DataError(fmt::format("'{}': {} images but {} labels", path.string(), n, y.count()));
  ImageSet set;
  set.height = set.width = 32;
  set.channels = 3;
  set.pixels.resize(n * 32 * 32 * 3);
  set.labels.resize(n);
  const std::uint8_t* src = x.bytes();
  // MATLAB column-major: element (row, col, ch, i) at row + 32*(col + 32*(ch + 3*i)).
  for (std::size_t i = 0; i < n; ++i) {
    for (int r = 0; r < 32; ++r)
      for (int col = 0; col < 32; ++col)
        for (int ch = 0; ch < 3; ++ch)
          set.pixels[((i * 32 + r) * 32 + col) * 3 + ch] = src[r + 32 * (col + 32 * (ch + 3 * i))];
    const int label = static_cast<int>(y.value(i));
    set.labels[i] = label == 10 ? 0 : label;
  }
  return set;
}

Dataset load_svhn(const fs::path& root) {
  Dataset ds;
  ds.name = "svhn";
  ds.num_classes = 10;
  ds.train = load_svhn_split(root / "train_32x32.mat");
  ds.test = load_svhn_split(root / "test_32x32.mat");
  return ds;
}

// Images stored channel-planar and column-major, 3 x 96 x 96 each.
ImageSet load_stl_images(const fs::path& path, const fs::path& labels_path) {
  constexpr int kSide = 96;
  constexpr std::size_t kBytes = kSide * kSide * 3;
  const char* hint = "expected stl10_binary/ under --data-root";
  const auto buf = read_file(path, hint);
  if (buf.empty() || buf.size() % kBytes != 0)
    throw DataError(fmt::format("'{}' is not an STL-10 image file", path.string()));
  const std::size_t n = buf.size() / kBytes;
  ImageSet set;
  set.height = set.width = kSide;
  set.channels = 3;
  set.pixels.resize(buf.size());
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      for (int col = 0; col < kSide; ++col)
        for (int row = 0; row < kSide; ++row)
          set.pixels[i * kBytes + (static_cast<std::size_t>(row) * kSide + col) * 3 + c] =
              buf[i * kBytes + static_cast<std::size_t>(c) * kSide * kSide + static_cast<std::size_t>(col) * kSide + row];
  if (labels_path.empty()) {
    set.labels.assign(n, -1);
  } else {
    const auto lab = read_file(labels_path, hint);
    if (lab.size() != n) throw DataError(fmt::format("'{}': {} labels for {} images", labels_path.string(), lab.size(), n));
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) set.labels[i] = lab[i] - 1;
  }
  return set;
}

Dataset load_stl10(const fs::path& root) {
  Dataset ds;
  ds.name = "stl10";
  ds.num_classes = 10;
  const fs::path dir = fs::exists(root / "stl10_binary") ? root / "stl10_binary" : root;
  ds.train = load_stl_images(dir / "train_X.bin", dir / "train_y.bin");
  ds.test = load_stl_images(dir / "test_X.bin", dir / "test_y.bin");
  ds.extra_unlabeled = load_stl_images(dir / "unlabeled_X.bin", {});
  return ds;
}

}  // namespace

bool dataset_needs_root(const std::string& name) { return name != "synthetic"; }

Dataset load_dataset(const std::string& name, const fs::path& root) {
  Dataset ds;
  if (name == "cifar10") ds = load_cifar10(root);
  else if (name == "cifar100") ds = load_cifar100(root);
  else if (name == "svhn") ds = load_svhn(root);
  else if (name == "stl10") ds = load_stl10(root);
  else throw ConfigError(fmt::format("unknown dataset '{}' (cifar10, cifar100, svhn, stl10, synthetic)", name));
  for (const auto* set : {&ds.train, &ds.test})
    for (int l : set->labels)
      if (l < 0 || l >= ds.num_classes) throw DataError(fmt::format("{}: label {} out of range", name, l));
  ds.channel_mean = channel_mean(ds.train);
  return ds;
}

Dataset load_dataset_for(const TrainConfig& cfg, const fs::path& root) {
  Dataset ds;
  if (cfg.dataset == "synthetic") {
    SyntheticOptions opts;
    opts.num_classes = cfg.num_classes;
    opts.train_size = cfg.synthetic_train_size;
    opts.test_size = cfg.synthetic_test_size;
    opts.distractor = cfg.synthetic_distractor;
    ds = make_synthetic_dataset(opts);
  } else {
    ds = load_dataset(cfg.dataset, root);
  }
  if (ds.num_classes != cfg.num_classes)
    throw ConfigError(fmt::format("num_classes = {} but dataset {} has {} classes", cfg.num_classes, ds.name,
                                  ds.num_classes));
  return ds;
}

// ----------------------------------------------------------------- split

LabeledSplit make_split(const Dataset& dataset, int num_labels, std::uint64_t fold_seed) {
  const std::size_t n = dataset.train.size();
  const int classes = dataset.num_classes;
  if (num_labels < 1 || static_cast<std::size_t>(num_labels) > n)
    throw ConfigError(fmt::format("num_labels must lie in [1, {}], got {}", n, num_labels));
  LabeledSplit split;
  split.fold_seed = fold_seed;
  split.per_class.assign(static_cast<std::size_t>(classes), 0);
  if (static_cast<std::size_t>(num_labels) == n) {
    split.labeled_indices.resize(n);
    std::iota(split.labeled_indices.begin(), split.labeled_indices.end(), std::size_t{0});
    for (int l : dataset.train.labels) ++split.per_class[static_cast<std::size_t>(l)];
    return split;
  }
  if (num_labels < classes)
    throw ConfigError(fmt::format("num_labels ({}) must be at least the number of classes ({}) for a balanced split",
                                  num_labels, classes));
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(dataset.train.labels[i])].push_back(i);
  Rng rng = make_rng(fold_seed, "split");
  for (int c = 0; c < classes; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    const int quota = num_labels / classes + (c < num_labels % classes ? 1 : 0);
    if (static_cast<std::size_t>(quota) > pool.size())
      throw ConfigError(fmt::format("class {} has {} images, fewer than the {} requested", c, pool.size(), quota));
    std::shuffle(pool.begin(), pool.end(), rng);
    split.labeled_indices.insert(split.labeled_indices.end(), pool.begin(), pool.begin() + quota);
    split.per_class[static_cast<std::size_t>(c)] = quota;
  }
  std::sort(split.labeled_indices.begin(), split.labeled_indices.end());
  return split;
}

void save_split(const LabeledSplit& split, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write split file '{}'", path.string()));
  out << "# fold_seed = " << split.fold_seed << "\n";
  out << "# num_labels = " << split.labeled_indices.size() << "\n";
  for (auto i : split.labeled_indices) out << i << "\n";
}

LabeledSplit load_split(const fs::path& path, int num_classes, const Dataset& dataset) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open split file '{}'", path.string()));
  LabeledSplit split;
  split.per_class.assign(static_cast<std::size_t>(num_classes), 0);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (auto pos = line.find("fold_seed ="); pos != std::string::npos)
        split.fold_seed = std::stoull(line.substr(pos + 11));
      continue;
    }
    const std::size_t idx = std::stoull(line);
    if (idx >= dataset.train.size()) throw DataError(fmt::format("split index {} out of range", idx));
    split.labeled_indices.push_back(idx);
    ++split.per_class[static_cast<std::size_t>(dataset.train.labels[idx])];
  }
  return split;
}

std::vector<std::size_t> unlabeled_pool(const Dataset& dataset, const LabeledSplit& split, bool include_labeled) {
  std::vector<std::size_t> pool;
  pool.reserve(dataset.pool_size());
  std::size_t next_labeled = 0;
  for (std::size_t i = 0; i < dataset.train.size(); ++i) {
    const bool labeled = next_labeled < split.labeled_indices.size() && split.labeled_indices[next_labeled] == i;
    if (labeled) ++next_labeled;
    if (!labeled || include_labeled) pool.push_back(i);
  }
  for (std::size_t i = 0; i < dataset.extra_unlabeled.size(); ++i) pool.push_back(dataset.train.size() + i);
  return pool;
}

// ---------------------------------------------------------------- stream

const std::vector<std::size_t>& BatchStream::Stream::epoch(std::int64_t e) {
  if (auto it = cache.find(e); it != cache.end()) return it->second;
  std::vector<std::size_t> perm = items;
  Rng rng = make_rng(seed, "epoch", {static_cast<std::uint64_t>(e)});
  std::shuffle(perm.begin(), perm.end(), rng);
  if (cache.size() >= 2) cache.erase(cache.begin());
  return cache.emplace(e, std::move(perm)).first->second;
}

std::size_t BatchStream::Stream::item(std::int64_t position) {
  const auto n = static_cast<std::int64_t>(items.size());
  return epoch(position / n)[static_cast<std::size_t>(position % n)];
}

BatchStream::BatchStream(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled, int batch_size,
                         int mu, std::uint64_t seed)
    : batch_size_(batch_size), unlabeled_batch_(batch_size * mu) {
  if (labeled.empty() || unlabeled.empty()) throw ConfigError("batch stream needs non-empty labeled and unlabeled sets");
  labeled_.items = std::move(labeled);
  labeled_.seed = derive_seed(seed, "labeled-stream");
  unlabeled_.items = std::move(unlabeled);
  unlabeled_.seed = derive_seed(seed, "unlabeled-stream");
}

BatchIndices BatchStream::at(std::int64_t step) {
  BatchIndices b;
  b.step = step;
  b.labeled.reserve(static_cast<std::size_t>(batch_size_));
  b.unlabeled.reserve(static_cast<std::size_t>(unlabeled_batch_));
  for (int j = 0; j < batch_size_; ++j) b.labeled.push_back(labeled_.item(step * batch_size_ + j));
  for (int j = 0; j < unlabeled_batch_; ++j) b.unlabeled.push_back(unlabeled_.item(step * unlabeled_batch_ + j));
  return b;
}

SslBatch assemble_batch(const Dataset& dataset, const BatchIndices& indices) {
  SslBatch batch;
  batch.step = indices.step;
  for (auto i : indices.labeled) {
    batch.labeled.push_back(dataset.train.image(i));
    batch.labels.push_back(dataset.train.labels[i]);
  }
  for (auto i : indices.unlabeled) batch.unlabeled.push_back(dataset.pool_image(i));
  return batch;
}

Tensor<float> to_tensor(std::span<const Image> images) {
  if (images.empty()) return {};
  const auto& first = images.front();
  Tensor<float> t(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    if (!img.same_shape(first)) throw ShapeError("to_tensor: images differ in shape");
    for (int c = 0; c < img.channels; ++c) {
      float* dst = t.ptr(static_cast<int>(i), c);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) dst[y * img.width + x] = img.at(y, x, c);
    }
  }
  return t;
}

}  // namespace dm
