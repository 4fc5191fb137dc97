#pragma once

// Run configuration: one JSON document covering every subcommand. Every key
// is optional and unknown keys are rejected with their dotted path.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cped/train.hpp"
#include "json.hpp"

namespace cped::harness {

struct DataConfig {
  std::string path;  // dataset directory for train / train-bc / eval / train-density
  std::string env = "pointmass2d";
  std::string kind = "medium";
  std::size_t transitions = 100000;
};

enum class ToySetting { SingleGaussian, Mixture };
std::string to_string(ToySetting s);
ToySetting toy_setting_from_string(const std::string& s);

struct ToyConfig {
  ToySetting setting = ToySetting::Mixture;
  std::size_t samples = 100000;
  std::size_t heldout = 10000;
  std::int64_t steps = 20000;
  std::size_t batch_size = 256;
};

struct KlRateConfig {
  ToySetting setting = ToySetting::Mixture;
  std::vector<std::size_t> sample_sizes = {1000, 10000, 100000};
  std::size_t seeds = 5;
  std::int64_t steps = 20000;
  std::size_t eval_samples = 10000;
  std::size_t batch_size = 256;
};

struct TabularConfig {
  std::size_t size = 5;
  double gamma = 0.99;
  std::string init = "uniform";  // uniform | optimal
  std::size_t max_iterations = 1000;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  train::TrainConfig train;
  ToyConfig toy;
  KlRateConfig kl_rate;
  TabularConfig tabular;

  void validate() const;
  nlohmann::json to_json() const;
  // Starts from the defaults and applies every key present in j.
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_config(const std::filesystem::path& path);

}  // namespace cped::harness
