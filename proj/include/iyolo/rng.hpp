#pragma once

#include <cstdint>
#include <random>

namespace iyolo {

/// Seeded uniform generator. Distribution math is done by hand so streams
/// are identical across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }  // [0, 1)

  float uniform(float lo, float hi) {
    return lo + (hi - lo) * static_cast<float>(uniform());
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace iyolo
