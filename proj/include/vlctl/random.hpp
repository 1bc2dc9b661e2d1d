#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace vlctl {

// Seeded generator used by every randomized operation. Streams are derived
// from a root seed plus small integer tags so that independent draws (train
// noise, validation noise, epoch shuffles) never share state.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::seed_seq seq = make_seq(seed, tags);
    engine_.seed(seq);
  }

  double gaussian() { return normal_(engine_); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  std::mt19937_64& engine() noexcept { return engine_; }

private:
  static std::seed_seq make_seq(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint32_t> words;
    words.push_back(static_cast<std::uint32_t>(seed));
    words.push_back(static_cast<std::uint32_t>(seed >> 32));
    for (auto t : tags) {
      words.push_back(static_cast<std::uint32_t>(t));
      words.push_back(static_cast<std::uint32_t>(t >> 32));
    }
    return std::seed_seq(words.begin(), words.end());
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace vlctl
