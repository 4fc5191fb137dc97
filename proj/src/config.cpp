#include "cped/config.hpp"

#include <set>

#include "cped/error.hpp"
#include "cped/serialize.hpp"

namespace cped::harness {

namespace {

// Reads optional keys from one object and reports whatever was not read.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: " + name() + " must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: " + field(key) + " has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& at(const char* key) const { return j_.at(key); }
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ValidationError("config: unknown key " + field(key.c_str()));
    }
  }

 private:
  std::string name() const { return path_.empty() ? "document" : path_; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void section(Section& parent, const char* key, F&& body) {
  if (!parent.has(key)) return;
  Section s(parent.at(key), parent.field(key));
  body(s);
  s.finish();
}

template <class T, class Parse>
void read_enum(Section& s, const char* key, T& out, Parse parse) {
  std::string v;
  if (!s.has(key)) return;
  s.read(key, v);
  try {
    out = parse(v);
  } catch (const ValidationError& e) {
    throw ValidationError("config: " + s.field(key) + ": " + e.what());
  }
}

std::string to_string(train::AlphaMode m) { return m == train::AlphaMode::Dual ? "dual" : "schedule"; }

train::AlphaMode alpha_mode_from_string(const std::string& s) {
  if (s == "schedule") return train::AlphaMode::Schedule;
  if (s == "dual") return train::AlphaMode::Dual;
  throw ValidationError("unknown alpha mode '" + s + "' (schedule, dual)");
}

}  // namespace

std::string to_string(ToySetting s) {
  return s == ToySetting::Mixture ? "mixture" : "single_gaussian";
}

ToySetting toy_setting_from_string(const std::string& s) {
  if (s == "mixture") return ToySetting::Mixture;
  if (s == "single_gaussian") return ToySetting::SingleGaussian;
  throw ValidationError("unknown toy setting '" + s + "' (single_gaussian, mixture)");
}

void RunConfig::validate() const {
  train.validate();
  envs::behavior_kind_from_string(data.kind);
  if (data.transitions == 0) throw ValidationError("data.transitions must be > 0");
  if (toy.samples < 2 || toy.heldout < 1) throw ValidationError("toy.samples must be >= 2 and toy.heldout >= 1");
  if (toy.steps < 0) throw ValidationError("toy.steps must be >= 0");
  if (toy.batch_size < 1) throw ValidationError("toy.batch_size must be >= 1");
  if (kl_rate.sample_sizes.empty()) throw ValidationError("kl_rate.sample_sizes must not be empty");
  for (std::size_t n : kl_rate.sample_sizes) {
    if (n < 2) throw ValidationError("kl_rate.sample_sizes entries must be >= 2");
  }
  if (kl_rate.seeds < 1) throw ValidationError("kl_rate.seeds must be >= 1");
  if (kl_rate.steps < 0) throw ValidationError("kl_rate.steps must be >= 0");
  if (kl_rate.eval_samples < 2) throw ValidationError("kl_rate.eval_samples must be >= 2");
  if (kl_rate.batch_size < 1) throw ValidationError("kl_rate.batch_size must be >= 1");
  if (tabular.size < 2) throw ValidationError("tabular.size must be >= 2");
  if (!(tabular.gamma >= 0.0 && tabular.gamma < 1.0)) throw ValidationError("tabular.gamma must lie in [0, 1)");
  if (tabular.init != "uniform" && tabular.init != "optimal") {
    throw ValidationError("tabular.init must be 'uniform' or 'optimal'");
  }
  if (tabular.max_iterations < 1) throw ValidationError("tabular.max_iterations must be >= 1");
}

nlohmann::json RunConfig::to_json() const {
  const train::TrainConfig& t = train;
  return {
      {"seed", seed},
      {"data",
       {{"path", data.path}, {"env", data.env}, {"kind", data.kind}, {"transitions", data.transitions}}},
      {"flow",
       {{"coupling_layers", t.flow.coupling_layers},
        {"conditioner_hidden_layers", t.flow.conditioner_hidden_layers},
        {"hidden_width", t.flow.hidden_width}}},
      {"gan",
       {{"kind", flow::to_string(t.gan.kind)},
        {"lambda", t.gan.lambda},
        {"generator_lr", t.gan.generator_lr},
        {"discriminator_lr", t.gan.discriminator_lr},
        {"discriminator_hidden", t.gan.discriminator_hidden}}},
      {"epsilon", {{"kind", density::to_string(t.epsilon.kind)}, {"quantile", t.epsilon.quantile}}},
      {"agent", t.agent.to_json()},
      {"train",
       {{"alpha_mode", to_string(t.alpha_mode)},
        {"alpha_schedule", t.alpha_schedule.to_json()},
        {"dual_alpha_lr", t.dual_alpha_lr},
        {"batch_size", t.batch_size},
        {"pretrain_steps", t.pretrain_steps},
        {"joint_steps", t.joint_steps},
        {"flow_freeze_step", t.flow_freeze_step},
        {"epoch_length", t.epoch_length},
        {"eval_episodes", t.eval_episodes}}},
      {"toy",
       {{"setting", to_string(toy.setting)},
        {"samples", toy.samples},
        {"heldout", toy.heldout},
        {"steps", toy.steps},
        {"batch_size", toy.batch_size}}},
      {"kl_rate",
       {{"setting", to_string(kl_rate.setting)},
        {"sample_sizes", kl_rate.sample_sizes},
        {"seeds", kl_rate.seeds},
        {"steps", kl_rate.steps},
        {"eval_samples", kl_rate.eval_samples},
        {"batch_size", kl_rate.batch_size}}},
      {"tabular",
       {{"size", tabular.size},
        {"gamma", tabular.gamma},
        {"init", tabular.init},
        {"max_iterations", tabular.max_iterations}}},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  train::TrainConfig& t = c.train;
  Section root(j, "");
  root.read("seed", c.seed);
  section(root, "data", [&](Section& s) {
    s.read("path", c.data.path);
    s.read("env", c.data.env);
    s.read("kind", c.data.kind);
    s.read("transitions", c.data.transitions);
  });
  section(root, "flow", [&](Section& s) {
    s.read("coupling_layers", t.flow.coupling_layers);
    s.read("conditioner_hidden_layers", t.flow.conditioner_hidden_layers);
    s.read("hidden_width", t.flow.hidden_width);
  });
  section(root, "gan", [&](Section& s) {
    read_enum(s, "kind", t.gan.kind, flow::gan_kind_from_string);
    s.read("lambda", t.gan.lambda);
    s.read("generator_lr", t.gan.generator_lr);
    s.read("discriminator_lr", t.gan.discriminator_lr);
    s.read("discriminator_hidden", t.gan.discriminator_hidden);
  });
  section(root, "epsilon", [&](Section& s) {
    read_enum(s, "kind", t.epsilon.kind, density::epsilon_kind_from_string);
    s.read("quantile", t.epsilon.quantile);
  });
  section(root, "agent", [&](Section& s) {
    s.read("hidden", t.agent.hidden);
    s.read("gamma", t.agent.gamma);
    s.read("tau", t.agent.tau);
    s.read("policy_noise", t.agent.policy_noise);
    s.read("noise_clip", t.agent.noise_clip);
    s.read("policy_frequency", t.agent.policy_frequency);
    s.read("actor_lr", t.agent.actor_lr);
    s.read("critic_lr", t.agent.critic_lr);
    s.read("action_bound", t.agent.action_bound);
  });
  section(root, "train", [&](Section& s) {
    read_enum(s, "alpha_mode", t.alpha_mode, alpha_mode_from_string);
    if (s.has("alpha_schedule")) {
      try {
        t.alpha_schedule = agent::AlphaSchedule::from_json(s.at("alpha_schedule"));
      } catch (const nlohmann::json::exception&) {
        throw ValidationError("config: train.alpha_schedule must be [[epoch, alpha], ...]");
      }
    }
    s.read("dual_alpha_lr", t.dual_alpha_lr);
    s.read("batch_size", t.batch_size);
    s.read("pretrain_steps", t.pretrain_steps);
    s.read("joint_steps", t.joint_steps);
    s.read("flow_freeze_step", t.flow_freeze_step);
    s.read("epoch_length", t.epoch_length);
    s.read("eval_episodes", t.eval_episodes);
  });
  section(root, "toy", [&](Section& s) {
    read_enum(s, "setting", c.toy.setting, toy_setting_from_string);
    s.read("samples", c.toy.samples);
    s.read("heldout", c.toy.heldout);
    s.read("steps", c.toy.steps);
    s.read("batch_size", c.toy.batch_size);
  });
  section(root, "kl_rate", [&](Section& s) {
    read_enum(s, "setting", c.kl_rate.setting, toy_setting_from_string);
    s.read("sample_sizes", c.kl_rate.sample_sizes);
    s.read("seeds", c.kl_rate.seeds);
    s.read("steps", c.kl_rate.steps);
    s.read("eval_samples", c.kl_rate.eval_samples);
    s.read("batch_size", c.kl_rate.batch_size);
  });
  section(root, "tabular", [&](Section& s) {
    s.read("size", c.tabular.size);
    s.read("gamma", c.tabular.gamma);
    s.read("init", c.tabular.init);
    s.read("max_iterations", c.tabular.max_iterations);
  });
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("config file not found: " + path.string());
  }
  return RunConfig::from_json(read_json_file(path));
}

}  // namespace cped::harness
