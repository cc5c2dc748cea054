#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "realdesc/util.hpp"

namespace realdesc {

/// Batches of pair indices in which no class appears twice.
///
/// One round visits every class once in a random order and draws one random
/// pair per class. The last, partial batch of a round is topped up with
/// further distinct classes drawn at random from the same round.
class UniqueClassBatcher {
 public:
  /// class_of_pair[i] is the class id of pair i.
  UniqueClassBatcher(std::vector<int64_t> class_of_pair, int64_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();
  /// Batches of one full round.
  std::vector<std::vector<std::size_t>> next_round();
  int64_t batches_per_round() const;
  int64_t num_classes() const { return static_cast<int64_t>(pairs_by_class_.size()); }
  /// Discards `n` batches, for resuming a run.
  void skip(int64_t n);

 private:
  void refill();

  std::vector<std::vector<std::size_t>> pairs_by_class_;
  int64_t batch_size_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> pending_;
};

/// Convenience: the first `rounds` rounds of a batcher.
std::vector<std::vector<std::size_t>> unique_class_batches(const std::vector<int64_t>& class_of_pair,
                                                           int64_t batch_size, std::uint64_t seed, int64_t rounds = 1);

}  // namespace realdesc
