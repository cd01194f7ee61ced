#ifndef DECOUPLE4D_RANDOM_HPP
#define DECOUPLE4D_RANDOM_HPP

#include <cstdint>
#include <random>

namespace decouple4d {

/// Substream tags. Each consumer draws from its own generator seeded by
/// (seed, tag, index) so that frames can be produced in any order.
enum class Stream : std::uint32_t {
  static_points = 1,
  dynamic_points = 2,
  camera_path = 3,
  depth_noise = 4,
  miscalibration = 5,
  pixel_noise = 6,
  projection = 7,
  feature_noise = 8,
};

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, Stream tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_RANDOM_HPP
