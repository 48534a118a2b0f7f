#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <string_view>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace patchdiff {

inline constexpr const char* kWorkersEnv = "PATCHDIFF_WORKERS";

/// Worker count from PATCHDIFF_WORKERS, else the hardware concurrency.
inline int default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// FNV-1a, used to tag partial results with the configuration they belong to.
inline std::uint64_t config_hash(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Runs fn(rng, replicate_id) for every replicate on a bounded worker pool.
/// Replicate r always gets RandomStream(seed, r) and its result lands in
/// slot r, so the output does not depend on the worker count.
template <typename Fn>
auto run_replicates(std::size_t reps, std::uint64_t seed, Fn&& fn, int workers = default_workers()) {
  using Result = std::invoke_result_t<Fn&, RandomStream&, std::size_t>;
  std::vector<Result> results(reps);
  constexpr std::size_t kChunk = 256;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(kChunk);
      if (begin >= reps) return;
      const std::size_t end = std::min(reps, begin + kChunk);
      try {
        for (std::size_t r = begin; r < end; ++r) {
          RandomStream rng(seed, r);
          results[r] = fn(rng, r);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(reps);
        return;
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>((reps + kChunk - 1) / kChunk)));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t reps = 0;
  std::uint64_t master_seed = 0;
  double censored_fraction = 0.0;
};

/// Per-worker summary: the raw per-replicate values of a contiguous block.
struct McPartial {
  std::uint64_t config_hash = 0;
  std::uint64_t master_seed = 0;
  std::size_t first_replicate = 0;
  std::vector<double> values;
};

namespace detail {

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::fabs(sum_) >= std::fabs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

/// Mean and standard error of a sequence, two-pass with compensated sums.
inline McEstimate summarize(std::span<const double> values, std::uint64_t seed) {
  if (values.empty()) throw Error("cannot summarize zero replicates");
  detail::CompensatedSum s;
  for (double v : values) s.add(v);
  const double n = static_cast<double>(values.size());
  const double mean = s.value() / n;
  detail::CompensatedSum ss;
  for (double v : values) ss.add((v - mean) * (v - mean));
  const double var = values.size() > 1 ? ss.value() / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n), values.size(), seed, 0.0};
}

/// Pools partial results in replicate order. Any partition of the same
/// replicates gives a bit-identical estimate.
inline McEstimate mc_aggregate(std::span<const McPartial> partials) {
  if (partials.empty()) throw Error("no partial results to aggregate");
  std::vector<const McPartial*> order;
  for (const auto& p : partials) {
    if (p.config_hash != partials.front().config_hash || p.master_seed != partials.front().master_seed)
      throw InvariantError("partial results come from different configurations");
    order.push_back(&p);
  }
  std::sort(order.begin(), order.end(),
            [](const McPartial* a, const McPartial* b) { return a->first_replicate < b->first_replicate; });
  std::vector<double> all;
  std::size_t expect = order.front()->first_replicate;
  for (const auto* p : order) {
    if (p->first_replicate != expect) throw InvariantError("partial results overlap or leave gaps");
    all.insert(all.end(), p->values.begin(), p->values.end());
    expect += p->values.size();
  }
  if (all.empty()) throw Error("cannot aggregate zero replicates");
  return summarize(all, partials.front().master_seed);
}

}  // namespace patchdiff
