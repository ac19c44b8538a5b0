#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ganforge/architectures.hpp"
#include "ganforge/conv.hpp"
#include "ganforge/png.hpp"
#include "ganforge/rng.hpp"

namespace ganforge {

namespace fs = std::filesystem;

/// A dataset directory: `count` PNG files plus manifest.json.
struct DatasetManifest {
  fs::path root_path;
  std::int64_t image_count = 0;
  int resolution = 0;
  int channels = 1;
};

inline void validate(const DatasetManifest& m) {
  if (m.image_count < 1) throw Error("manifest " + m.root_path.string() + ": image_count must be >= 1");
  if (m.resolution < 4 || !is_power_of_two(m.resolution)) {
    throw Error("manifest " + m.root_path.string() + ": resolution must be a power of two >= 4, got " +
                std::to_string(m.resolution));
  }
  if (m.channels != 1) throw Error("manifest " + m.root_path.string() + ": only single-channel data is supported");
}

inline DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  std::ifstream in(file);
  if (!in) throw Error("missing dataset manifest " + file.string());
  nlohmann::json j;
  try {
    in >> j;
    DatasetManifest m{dir, j.at("image_count").get<std::int64_t>(), j.at("resolution").get<int>(),
                      j.at("channels").get<int>()};
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed dataset manifest " + file.string() + ": " + e.what());
  }
}

inline void write_manifest(const DatasetManifest& m) {
  validate(m);
  nlohmann::json j{{"image_count", m.image_count}, {"resolution", m.resolution}, {"channels", m.channels}};
  std::ofstream out(m.root_path / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + m.root_path.string());
  out << j.dump(2) << '\n';
}

/// Sorted list of the dataset's image files.
inline std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Stored 8-bit value -> [-1, 1].
inline double pixel_to_unit(std::uint8_t v) { return static_cast<double>(v) * (2.0 / 255.0) - 1.0; }

/// [-1, 1] -> stored 8-bit value, rounding half up.
inline std::uint8_t unit_to_pixel(double v) {
  const double p = std::floor((v + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

/// Decoded dataset at native resolution, kept as 8-bit pixels.
struct ImageSet {
  int resolution = 0;
  std::vector<fs::path> files;
  std::vector<std::uint8_t> pixels;  // count x resolution x resolution

  std::int64_t count() const { return static_cast<std::int64_t>(files.size()); }
  const std::uint8_t* image(std::int64_t i) const {
    return pixels.data() + i * static_cast<std::int64_t>(resolution) * resolution;
  }
};

inline ImageSet load_images(const DatasetManifest& m) {
  validate(m);
  ImageSet set;
  set.resolution = m.resolution;
  set.files = list_images(m.root_path);
  if (static_cast<std::int64_t>(set.files.size()) != m.image_count) {
    throw Error("dataset " + m.root_path.string() + " lists " + std::to_string(m.image_count) + " images but holds " +
                std::to_string(set.files.size()) + " PNG files");
  }
  const std::size_t per = static_cast<std::size_t>(m.resolution) * m.resolution;
  set.pixels.reserve(per * set.files.size());
  for (const auto& f : set.files) {
    GrayImage img = read_png_gray8(f);
    if (img.width != img.height) throw Error("image " + f.string() + " is not square");
    if (img.width != m.resolution) {
      throw Error("image " + f.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                  ", manifest declares " + std::to_string(m.resolution));
    }
    set.pixels.insert(set.pixels.end(), img.pixels.begin(), img.pixels.end());
  }
  return set;
}

/// Box-filter downsampling of an NCHW batch by an integer factor.
template <class T>
Tensor<T> area_downsample(const Tensor<T>& x, std::int64_t factor) {
  return factor == 1 ? x : detail::avg_pool_raw(x, factor);
}

/// Images `indices` of `set` as a (n, 1, R, R) batch in [-1, 1], area
/// averaged down to `target_resolution`.
template <class T>
Tensor<T> make_batch(const ImageSet& set, std::span<const std::int64_t> indices, int target_resolution) {
  if (target_resolution > set.resolution || !is_power_of_two(target_resolution)) {
    throw Error("target resolution " + std::to_string(target_resolution) +
                " must be a power of two <= native resolution " + std::to_string(set.resolution));
  }
  const int r = target_resolution, f = set.resolution / target_resolution, src = set.resolution;
  const auto n = static_cast<std::int64_t>(indices.size());
  Tensor<T> batch(Shape{n, 1, r, r});
  const double inv = 1.0 / (f * f);
  for (std::int64_t b = 0; b < n; ++b) {
    const std::uint8_t* img = set.image(indices[static_cast<std::size_t>(b)]);
    T* out = batch.ptr() + b * r * r;
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        double s = 0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) s += img[(y * f + dy) * src + x * f + dx];
        out[y * r + x] = static_cast<T>(s * inv * (2.0 / 255.0) - 1.0);
      }
  }
  return batch;
}

/// Serializable position of a DataLoader.
struct LoaderState {
  std::int64_t epoch = 0;
  std::int64_t cursor = 0;  // next batch within the epoch
  std::vector<std::int64_t> order;
  std::string rng;
};

/// Epoch-based batch stream over an ImageSet. Every epoch is a fresh
/// uniform shuffle; the trailing partial batch is dropped.
template <class T>
class DataLoader {
 public:
  DataLoader(const ImageSet& set, std::int64_t batch_size, int target_resolution, std::uint64_t seed)
      : set_(&set), batch_size_(batch_size), resolution_(target_resolution), rng_(seed) {
    if (batch_size < 1 || batch_size > set.count()) {
      throw Error("batch size " + std::to_string(batch_size) + " must lie in [1, " + std::to_string(set.count()) + "]");
    }
    set_resolution(target_resolution);
    order_.resize(static_cast<std::size_t>(set.count()));
    std::iota(order_.begin(), order_.end(), 0);
    cursor_ = batches_per_epoch();  // forces a shuffle on first use
    epoch_ = -1;
  }

  std::int64_t batches_per_epoch() const { return set_->count() / batch_size_; }
  std::int64_t batch_size() const { return batch_size_; }
  int resolution() const { return resolution_; }
  /// Zero-based index of the epoch the last returned batch belongs to.
  std::int64_t epoch() const { return epoch_; }
  bool at_epoch_end() const { return cursor_ >= batches_per_epoch(); }

  void set_resolution(int r) {
    if (r > set_->resolution || !is_power_of_two(r)) {
      throw Error("loader resolution " + std::to_string(r) + " must be a power of two <= " +
                  std::to_string(set_->resolution));
    }
    resolution_ = r;
  }

  Tensor<T> next_batch() {
    if (at_epoch_end()) {
      std::shuffle(order_.begin(), order_.end(), rng_.engine());
      cursor_ = 0;
      ++epoch_;
    }
    std::span<const std::int64_t> idx(order_.data() + cursor_ * batch_size_, static_cast<std::size_t>(batch_size_));
    ++cursor_;
    return make_batch<T>(*set_, idx, resolution_);
  }

  /// Indices of the batch last returned by next_batch().
  std::span<const std::int64_t> last_indices() const {
    return {order_.data() + (cursor_ - 1) * batch_size_, static_cast<std::size_t>(batch_size_)};
  }

  LoaderState state() const { return {epoch_, cursor_, order_, rng_.serialize()}; }

  void restore(const LoaderState& s) {
    if (static_cast<std::int64_t>(s.order.size()) != set_->count()) {
      throw Error("loader state covers " + std::to_string(s.order.size()) + " images, dataset has " +
                  std::to_string(set_->count()));
    }
    epoch_ = s.epoch, cursor_ = s.cursor, order_ = s.order;
    rng_ = Rng::deserialize(s.rng);
  }

 private:
  const ImageSet* set_;
  std::int64_t batch_size_;
  int resolution_;
  Rng rng_;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
  std::int64_t epoch_ = 0;
};

/// Image `index` of a batch as 8-bit pixels.
template <class T>
GrayImage to_gray_image(const Tensor<T>& batch, std::int64_t index) {
  const int r = static_cast<int>(batch.dim(2));
  GrayImage img{static_cast<int>(batch.dim(3)), r, {}};
  const std::int64_t per = batch.dim(2) * batch.dim(3);
  img.pixels.resize(static_cast<std::size_t>(per));
  for (std::int64_t i = 0; i < per; ++i) img.pixels[static_cast<std::size_t>(i)] = unit_to_pixel(batch[index * per + i]);
  return img;
}

/// Tiles a batch into a `cols`-wide mosaic with a 1-pixel black border.
template <class T>
GrayImage make_grid(const Tensor<T>& batch, int cols) {
  const int n = static_cast<int>(batch.dim(0)), h = static_cast<int>(batch.dim(2)), w = static_cast<int>(batch.dim(3));
  cols = std::max(1, std::min(cols, n));
  const int rows = (n + cols - 1) / cols;
  GrayImage grid{cols * (w + 1) + 1, rows * (h + 1) + 1, {}};
  grid.pixels.assign(static_cast<std::size_t>(grid.width) * grid.height, 0);
  for (int i = 0; i < n; ++i) {
    GrayImage tile = to_gray_image(batch, i);
    const int oy = (i / cols) * (h + 1) + 1, ox = (i % cols) * (w + 1) + 1;
    for (int y = 0; y < h; ++y)
      std::copy_n(tile.pixels.data() + y * w, w, grid.pixels.data() + (oy + y) * grid.width + ox);
  }
  return grid;
}

namespace detail {

struct Ellipse {
  double cx, cy, a, b, theta;
  bool contains(double x, double y, double grow = 1.0) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / (a * grow), v = (-s * dx + c * dy) / (b * grow);
    return u * u + v * v <= 1.0;
  }
};

/// One phantom slice: a skull-like elliptical ring around a brain-intensity
/// interior with a few brighter or darker blobs. Intensities in [0, 1].
inline std::vector<double> render_phantom(int resolution, Rng& rng) {
  Ellipse head{0.5 + rng.uniform(-0.04, 0.04), 0.5 + rng.uniform(-0.04, 0.04), rng.uniform(0.33, 0.44), 0.0,
               rng.uniform(-0.35, 0.35)};
  head.b = head.a * rng.uniform(0.72, 0.92);
  const double thickness = rng.uniform(0.025, 0.06);
  const double skull = rng.uniform(0.75, 1.0), brain = rng.uniform(0.28, 0.55);
  Ellipse inner = head;
  inner.a -= thickness, inner.b -= thickness;
  const int blob_count = 2 + static_cast<int>(rng.uniform(0.0, 3.0));
  std::vector<std::pair<Ellipse, double>> blobs;
  for (int i = 0; i < blob_count; ++i) {
    const double r = rng.uniform(0.0, 0.55), phi = rng.uniform(0.0, 2.0 * M_PI);
    Ellipse e{inner.cx + r * inner.a * std::cos(phi), inner.cy + r * inner.b * std::sin(phi), rng.uniform(0.04, 0.15),
              rng.uniform(0.03, 0.12), rng.uniform(0.0, M_PI)};
    blobs.emplace_back(e, rng.uniform(-0.25, 0.4));
  }
  std::vector<double> img(static_cast<std::size_t>(resolution) * resolution, 0.0);
  const double step = 1.0 / resolution;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      double acc = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = (x + 0.25 + 0.5 * sx) * step, py = (y + 0.25 + 0.5 * sy) * step;
          double v = 0;
          if (inner.contains(px, py)) {
            v = brain;
            for (const auto& [e, delta] : blobs) {
              if (e.contains(px, py)) v += delta;
            }
          } else if (head.contains(px, py)) {
            v = skull;
          }
          acc += std::clamp(v, 0.0, 1.0);
        }
      img[static_cast<std::size_t>(y) * resolution + x] = acc / 4.0;
    }
  return img;
}

}  // namespace detail

/// Writes `count` synthetic head phantoms plus a manifest into `dir`.
/// Output files are a pure function of (count, resolution, seed).
inline DatasetManifest make_phantom_dataset(const fs::path& dir, std::int64_t count, int resolution,
                                            std::uint64_t seed) {
  if (count < 1) throw Error("phantom count must be >= 1");
  if (resolution < 4 || !is_power_of_two(resolution)) {
    throw Error("phantom resolution must be a power of two >= 4, got " + std::to_string(resolution));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create dataset directory " + dir.string() + ": " + ec.message());
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    auto intensities = detail::render_phantom(resolution, rng);
    GrayImage img{resolution, resolution, {}};
    img.pixels.reserve(intensities.size());
    for (double v : intensities) img.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%06lld.png", static_cast<long long>(i));
    write_png_gray8(dir / name, img);
  }
  DatasetManifest m{dir, count, resolution, 1};
  write_manifest(m);
  return m;
}

}  // namespace ganforge
