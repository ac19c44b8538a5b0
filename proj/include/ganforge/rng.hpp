#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "ganforge/tensor.hpp"

namespace ganforge {

/// Seedable random stream whose complete state (engine and the cached
/// normal deviate) round-trips through a string, so a resumed run draws
/// exactly the numbers the uninterrupted run would have drawn.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  template <class T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(uniform(lo, hi));
    return t;
  }

  template <class T>
  Tensor<T> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(normal() * stddev);
    return t;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }

  static Rng deserialize(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng.engine_ >> rng.normal_;
    if (!is) throw Error("corrupt rng state");
    return rng;
  }

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && normal_ == other.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Derives an independent seed for a named sub-stream (image index, eval
/// latents, ...) from a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace ganforge
