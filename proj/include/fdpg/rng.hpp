#pragma once

#include <array>
#include <cstdint>

namespace fdpg {

// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
// easy as 1, 2, 3").
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// Purpose tags keep training, evaluation and context draws on disjoint streams.
enum class StreamDomain : std::uint32_t {
  Training = 1,
  Evaluation = 2,
  Context = 3,
  Initialization = 4,
};

// A counter-based stream identified by (seed, domain, step, index). Draws are
// a pure function of the identifier and the draw position, so any number of
// streams can be consumed in any order or on any thread with identical results.
class CounterStream {
 public:
  CounterStream(std::uint64_t seed, StreamDomain domain, std::uint64_t step,
                std::uint64_t index);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  std::uint64_t next_u64();

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

}  // namespace fdpg
