#pragma once

// Block partitioning, block energies S^2_{j,i} and the local hard block
// thresholding estimator that centers every ball.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "confball/numerics.hpp"
#include "confball/sequence_model.hpp"

namespace confball {

/// L = max(1, ceil(log n)). The ceiling keeps e^{-2L} <= n^{-2}.
inline int block_size_for(int n) {
  if (n < 2) throw std::invalid_argument("block_size_for: n must be >= 2");
  const int L = static_cast<int>(std::ceil(std::log(static_cast<double>(n))));
  return std::max(1, L);
}

/// Half-open range [begin, end) of 0-based positions within a level.
struct BlockRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const BlockRange&, const BlockRange&) = default;
};

struct BlockPartition {
  int level = 0;
  int block_size = 1;
  std::vector<BlockRange> blocks;
};

/// ceil(2^j / L) contiguous blocks; only the last may be shorter than L.
inline BlockPartition partition_level(int j, int L) {
  if (j < 0) throw std::invalid_argument("partition_level: level must be >= 0");
  if (L < 1) throw std::invalid_argument("partition_level: block size must be >= 1");
  BlockPartition part{j, L, {}};
  const std::size_t m = level_size(j);
  const auto step = static_cast<std::size_t>(L);
  part.blocks.reserve((m + step - 1) / step);
  for (std::size_t b = 0; b < m; b += step) part.blocks.push_back({b, std::min(m, b + step)});
  return part;
}

struct BlockSummary {
  int level = 0;
  int block_index = 0;
  std::size_t begin = 0;
  std::size_t size = 0;
  double s2 = 0.0;
  bool kept = false;

  /// lambda_* |B| / n, the keep threshold for this block.
  [[nodiscard]] double threshold(int n) const { return lambda_star() * static_cast<double>(size) / n; }
};

/// A block is kept iff S^2 >= lambda_* |B| / n. A ragged final block uses its
/// own size so the per-coordinate calibration is unchanged.
inline bool keep_block(double s2, std::size_t size, int n) {
  return s2 >= lambda_star() * static_cast<double>(size) / n;
}

inline std::vector<BlockSummary> block_summaries(std::span<const double> level_values, int j, int n) {
  if (level_values.size() != level_size(j)) {
    throw std::invalid_argument("block_summaries: slice length does not match level " + std::to_string(j));
  }
  const auto part = partition_level(j, block_size_for(n));
  std::vector<BlockSummary> out;
  out.reserve(part.blocks.size());
  int index = 0;
  for (const auto& blk : part.blocks) {
    const double s2 = squared_norm(level_values.subspan(blk.begin, blk.size()));
    out.push_back({j, index++, blk.begin, blk.size(), s2, keep_block(s2, blk.size(), n)});
  }
  return out;
}

inline std::vector<BlockSummary> block_summaries(const CoefficientVector& y, int j, int n) {
  return block_summaries(y.level(j), j, n);
}

/// Hard block thresholding on levels j < max_level; higher levels are zero.
inline CoefficientVector threshold_estimate(const CoefficientVector& y, int n, int max_level) {
  if (max_level < 0 || max_level > y.levels()) {
    throw std::invalid_argument("threshold_estimate: max_level must be in [0, J]");
  }
  CoefficientVector out(y.levels());
  for (int j = 0; j < max_level; ++j) {
    const auto src = y.level(j);
    auto dst = out.level(j);
    for (const auto& blk : block_summaries(src, j, n)) {
      if (!blk.kept) continue;
      for (std::size_t k = blk.begin; k < blk.begin + blk.size; ++k) dst[k] = src[k];
    }
  }
  return out;
}

/// Squared l2 distance over all coordinates.
inline double loss(const CoefficientVector& theta_hat, const CoefficientVector& theta) {
  if (theta_hat.levels() != theta.levels()) {
    throw std::invalid_argument("loss: shape mismatch (J = " + std::to_string(theta_hat.levels()) + " vs " +
                                std::to_string(theta.levels()) + ")");
  }
  const auto a = theta_hat.flat();
  const auto b = theta.flat();
  CompensatedSum acc;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc.add(d * d);
  }
  return acc.value();
}

}  // namespace confball
