#ifndef ADVSEG_RANDOM_HPP
#define ADVSEG_RANDOM_HPP

#include <cstdint>
#include <random>

#include "advseg/tensor.hpp"

namespace advseg {

using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits; same stream on every platform.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

inline Matrix uniform_matrix(Index rows, Index cols, double range, Rng& rng) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = uniform(rng, -range, range);
  return m;
}

// Fisher-Yates with uniform_index, so shuffles are reproducible across
// standard library implementations.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace advseg

#endif  // ADVSEG_RANDOM_HPP
