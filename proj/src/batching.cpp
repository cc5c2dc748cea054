#include "realdesc/batching.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "realdesc/errors.hpp"

namespace realdesc {

UniqueClassBatcher::UniqueClassBatcher(std::vector<int64_t> class_of_pair, int64_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  std::map<int64_t, std::vector<std::size_t>> grouped;
  for (std::size_t i = 0; i < class_of_pair.size(); ++i) grouped[class_of_pair[i]].push_back(i);
  for (auto& [cls, pairs] : grouped) pairs_by_class_.push_back(std::move(pairs));
  if (batch_size_ < 1) throw ValidationError("batch size must be positive");
  if (batch_size_ > num_classes())
    throw ValidationError("batch size " + std::to_string(batch_size_) + " exceeds the " + std::to_string(num_classes()) +
                          " available classes");
}

int64_t UniqueClassBatcher::batches_per_round() const { return (num_classes() + batch_size_ - 1) / batch_size_; }

void UniqueClassBatcher::refill() {
  const auto n = static_cast<std::size_t>(num_classes());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng_.shuffle(order);
  auto draw = [&](std::size_t cls) {
    const auto& pairs = pairs_by_class_[cls];
    return pairs[static_cast<std::size_t>(rng_.below(pairs.size()))];
  };
  const auto bs = static_cast<std::size_t>(batch_size_);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    std::vector<std::size_t> batch;
    std::vector<bool> used(n, false);
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(draw(order[i]));
      used[order[i]] = true;
    }
    if (batch.size() < bs) {
      std::vector<std::size_t> rest;
      for (std::size_t c = 0; c < n; ++c)
        if (!used[c]) rest.push_back(c);
      rng_.shuffle(rest);
      for (std::size_t j = 0; batch.size() < bs; ++j) batch.push_back(draw(rest[j]));
    }
    pending_.push_back(std::move(batch));
  }
  std::reverse(pending_.begin(), pending_.end());
}

std::vector<std::size_t> UniqueClassBatcher::next() {
  if (pending_.empty()) refill();
  auto b = std::move(pending_.back());
  pending_.pop_back();
  return b;
}

std::vector<std::vector<std::size_t>> UniqueClassBatcher::next_round() {
  std::vector<std::vector<std::size_t>> out;
  for (int64_t i = 0; i < batches_per_round(); ++i) out.push_back(next());
  return out;
}

void UniqueClassBatcher::skip(int64_t n) {
  for (int64_t i = 0; i < n; ++i) next();
}

std::vector<std::vector<std::size_t>> unique_class_batches(const std::vector<int64_t>& class_of_pair,
                                                           int64_t batch_size, std::uint64_t seed, int64_t rounds) {
  UniqueClassBatcher b(class_of_pair, batch_size, seed);
  std::vector<std::vector<std::size_t>> out;
  for (int64_t r = 0; r < rounds; ++r) {
    auto round = b.next_round();
    out.insert(out.end(), round.begin(), round.end());
  }
  return out;
}

}  // namespace realdesc
