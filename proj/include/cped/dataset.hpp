#pragma once

// Offline transition datasets: generation, normalization, batching, files.
//
// On disk a dataset is a directory holding meta.json and transitions.jsonl
// (one {"s", "a", "r", "s_next", "done"} object per line, numbers printed with
// 17 significant digits).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cped/envs.hpp"
#include "cped/normalization.hpp"
#include "cped/rng.hpp"
#include "cped/tensor.hpp"
#include "json.hpp"

namespace cped::data {

inline constexpr int kFormatVersion = 1;

struct DatasetMeta {
  std::string env_id;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::string behavior;
  std::uint64_t seed = 0;
  std::vector<std::size_t> episode_starts;  // row index of each episode's first transition
  NormalizationStats state_stats;
  NormalizationStats action_stats;
  NormalizationStats reward_stats;
  bool normalized = false;
};

struct Batch {
  Tensor s, a, r, s_next, done;  // r and done are n x 1; done is 0/1
  std::size_t size() const { return s.rows(); }
};

class OfflineDataset {
 public:
  OfflineDataset() = default;
  OfflineDataset(DatasetMeta meta, Tensor s, Tensor a, Tensor r, Tensor s_next, Tensor done);

  std::size_t size() const { return s_.rows(); }
  const DatasetMeta& meta() const { return meta_; }
  const Tensor& states() const { return s_; }
  const Tensor& actions() const { return a_; }
  const Tensor& rewards() const { return r_; }
  const Tensor& next_states() const { return s_next_; }
  const Tensor& dones() const { return done_; }
  std::size_t episodes() const { return meta_.episode_starts.size(); }
  // [s | a] rows.
  Tensor state_actions() const;

  // Recomputes the stats in meta from the current columns.
  void refit_stats();
  // Rows drawn uniformly with replacement.
  Batch sample_batch(std::size_t batch_size, Rng& rng) const;
  Batch rows(std::span<const std::size_t> idx) const;

  // Per-episode undiscounted returns, in the order they were collected.
  std::vector<double> episode_returns() const;

  void validate() const;

 private:
  DatasetMeta meta_;
  Tensor s_, a_, r_, s_next_, done_;
};

// Rolls out `kind` until at least n transitions, finishing the last episode.
// Episode e uses rng stream "episode"/e of Rng(seed).
OfflineDataset generate_dataset(const envs::Env& env, envs::BehaviorKind kind, std::size_t n,
                                std::uint64_t seed);

// s, s_next with state stats, a with action stats, r with reward stats.
OfflineDataset normalize(const OfflineDataset& d);
OfflineDataset denormalize(const OfflineDataset& d);

void save_dataset(const OfflineDataset& d, const std::filesystem::path& dir);
OfflineDataset load_dataset(const std::filesystem::path& dir);

nlohmann::json meta_to_json(const DatasetMeta& m, std::size_t transitions);

}  // namespace cped::data
