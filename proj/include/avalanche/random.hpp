#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace avalanche {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Random stream `stream_id` of a master seed. Streams depend only on
/// (master_seed, stream_id), so work items can run in any order or thread.
class StreamRng {
 public:
  StreamRng(std::uint64_t master_seed, std::uint64_t stream_id)
      : engine_(splitmix64(master_seed ^ splitmix64(stream_id + 0x632BE59BD9B4E019ULL))) {}

  /// Uniform double in [0, 1) with 53 random bits; platform independent.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }
  double exponential(double rate) { return -std::log(uniform_open0()) / rate; }
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace avalanche
