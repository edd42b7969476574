#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfeig/kernels/kernels.hpp"

namespace mfeig {

// A reproducible, splittable random stream addressed by (master_seed,
// stream_path). Identical addresses always produce identical draw sequences;
// child streams are statistically independent of their parents and siblings.
// Draws are counter-indexed, so draw i is the same no matter how many draws
// are requested around it.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t master_seed);

  // Child stream whose path is this path + [label].
  RngStream child(std::uint64_t label) const;

  std::uint64_t master_seed() const { return master_seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }
  kernels::StreamKey raw() const { return key_; }

  // Uniform draws on the open interval (0,1), draw indices [start, start+n).
  void uniform(std::uint64_t start, std::span<double> out) const;
  double uniform_at(std::uint64_t index) const;

  // Standard normal draws via the inverse CDF; draw i consumes uniform i.
  void normal(std::uint64_t start, std::span<double> out) const;

 private:
  RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> path, kernels::StreamKey key)
      : master_seed_(master_seed), path_(std::move(path)), key_(key) {}

  std::uint64_t master_seed_ = 0;
  std::vector<std::uint64_t> path_;
  kernels::StreamKey key_;
};

// Path-free derivation for hot loops; RngStream::child is built on this.
kernels::StreamKey derive_child_key(kernels::StreamKey parent, std::uint64_t label);
kernels::StreamKey root_key(std::uint64_t master_seed);

// Inverse standard normal CDF (Wichura's PPND16 rational approximations).
double inv_std_normal_cdf(double p);

}  // namespace mfeig
