#include "cped/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cped/analysis.hpp"
#include "cped/config.hpp"
#include "cped/dataset.hpp"
#include "cped/error.hpp"
#include "cped/plots.hpp"
#include "cped/serialize.hpp"
#include "cped/train.hpp"

namespace cped::harness {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)");
  cmd->add_option("--seed", c.seed, "Seed; overrides the config");
  cmd->add_option("--out", c.out, "Output directory");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  if (c.out.empty()) throw ValidationError("missing required option --out");
  fs::create_directories(c.out);
  return c.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

// Every output directory records the resolved config, seed included.
void write_config(const fs::path& dir, const RunConfig& cfg) {
  write_json_file(dir / "config.json", cfg.to_json());
}

data::OfflineDataset dataset_for(const RunConfig& cfg) {
  if (cfg.data.path.empty()) {
    throw ValidationError("missing required field data.path (set it in the config or pass --data)");
  }
  return data::load_dataset(cfg.data.path);
}

void print_epoch(const train::EpochMetrics& m) {
  std::fprintf(stderr, "epoch %lld  return %.2f +- %.2f\n", static_cast<long long>(m.epoch),
               m.mean_return, m.std_return);
}

nlohmann::json agent_checkpoint(const agent::AgentState& a, const std::string& env,
                                const nlohmann::json& flow) {
  return {{"format", "cped-agent"}, {"version", 1}, {"env", env}, {"agent", a.to_json()}, {"flow", flow}};
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Offline RL with a flow-density constrained actor", "cped_lab"};
  app.require_subcommand(1);

  Common gen_c, dens_c, train_c, bc_c, eval_c, toy_c, kl_c, tab_c, plot_c;
  std::string env_id, kind, data_path, checkpoint, setting;
  std::optional<std::size_t> n_transitions, episodes;
  std::vector<std::string> run_dirs;
  double lambda = -1.0;

  CLI::App* gen = app.add_subcommand("gen-data", "Roll out a behavior policy into a dataset directory");
  add_common(gen, gen_c);
  gen->add_option("--env", env_id, "Environment id");
  gen->add_option("--kind", kind, "random | medium | expert | medium_replay_mix");
  gen->add_option("--n", n_transitions, "Number of transitions");

  CLI::App* dens = app.add_subcommand("train-density", "Fit the Flow-GAN behavior density");
  add_common(dens, dens_c);
  dens->add_option("--data", data_path, "Dataset directory");

  CLI::App* trn = app.add_subcommand("train", "Density pretraining followed by constrained actor-critic");
  add_common(trn, train_c);
  trn->add_option("--data", data_path, "Dataset directory");

  CLI::App* bc = app.add_subcommand("train-bc", "Behavior-cloning baseline");
  add_common(bc, bc_c);
  bc->add_option("--data", data_path, "Dataset directory");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate an agent checkpoint");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", checkpoint, "agent.json from train or train-bc")->required();
  ev->add_option("--episodes", episodes, "Evaluation episodes");

  CLI::App* toy = app.add_subcommand("toy-density", "Two-dimensional density recovery experiment");
  add_common(toy, toy_c);
  toy->add_option("--setting", setting, "single_gaussian | mixture");
  toy->add_option("--lambda", lambda, "Likelihood weight; overrides gan.lambda");

  CLI::App* kl = app.add_subcommand("kl-rate", "KL to the true density as the sample count grows");
  add_common(kl, kl_c);
  kl->add_option("--setting", setting, "single_gaussian | mixture");

  CLI::App* tab = app.add_subcommand("tabular-check", "Policy-iteration contraction on a gridworld");
  add_common(tab, tab_c);

  CLI::App* plot = app.add_subcommand("plot", "SVG curves from run directories");
  add_common(plot, plot_c);
  plot->add_option("runs", run_dirs, "Run directories containing metrics.csv")->required();

  if (!args.empty() && args[0].rfind("-", 0) != 0 && app.get_subcommand_no_throw(args[0]) == nullptr) {
    std::cerr << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
    return 1;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve(gen_c);
      if (!env_id.empty()) cfg.data.env = env_id;
      if (!kind.empty()) cfg.data.kind = kind;
      if (n_transitions) cfg.data.transitions = *n_transitions;
      cfg.validate();
      const fs::path dir = out_dir(gen_c);
      const auto env = envs::make_env(cfg.data.env);
      const auto d = data::generate_dataset(*env, envs::behavior_kind_from_string(cfg.data.kind),
                                            cfg.data.transitions, cfg.seed);
      data::save_dataset(d, dir);
      write_config(dir, cfg);
      std::fprintf(stderr, "wrote %zu transitions (%zu episodes) to %s\n", d.size(), d.episodes(),
                   dir.string().c_str());
    } else if (dens->parsed()) {
      RunConfig cfg = resolve(dens_c);
      if (!data_path.empty()) cfg.data.path = data_path;
      const auto d = dataset_for(cfg);
      const fs::path dir = out_dir(dens_c);
      write_config(dir, cfg);
      try {
        const train::DensityResult r =
            train::train_density(d.state_actions(), cfg.train.flow, cfg.train.gan,
                                 cfg.train.batch_size, cfg.train.pretrain_steps, Rng(cfg.seed), 1);
        write_text(dir / "loss_trace.csv", loss_trace_csv(r.trace));
        write_json_file(dir / "flow.json", train::flow_checkpoint(r.gan, r.stats, d.meta().state_dim));
        const auto svc = density::DensityService::view(r.gan.model(), r.stats, d.meta().state_dim);
        write_json_file(dir / "report.json",
                        {{"steps", cfg.train.pretrain_steps},
                         {"dataset_mean_log_likelihood",
                          mean_of(svc.log_likelihood(d.states(), d.actions()))}});
      } catch (const train::DivergenceError& e) {
        write_text(dir / "loss_trace.csv", loss_trace_csv(e.trace));
        throw RuntimeFailure(std::string(e.what()) + "; loss trace in " +
                             (dir / "loss_trace.csv").string());
      }
    } else if (trn->parsed()) {
      RunConfig cfg = resolve(train_c);
      if (!data_path.empty()) cfg.data.path = data_path;
      const auto d = dataset_for(cfg);
      const fs::path dir = out_dir(train_c);
      write_config(dir, cfg);
      const train::CpedResult r = train::train_cped(cfg.train, d, cfg.seed, print_epoch);
      write_text(dir / "metrics.csv", train::metrics_csv(r.metrics));
      write_text(dir / "loss_trace.csv", loss_trace_csv(r.pretrain_trace));
      write_json_file(dir / "agent.json",
                      agent_checkpoint(r.agent, d.meta().env_id,
                                       train::flow_checkpoint(r.gan, r.flow_stats, d.meta().state_dim)));
    } else if (bc->parsed()) {
      RunConfig cfg = resolve(bc_c);
      if (!data_path.empty()) cfg.data.path = data_path;
      const auto d = dataset_for(cfg);
      const fs::path dir = out_dir(bc_c);
      write_config(dir, cfg);
      const train::BcResult r = train::train_bc(cfg.train, d, cfg.seed, print_epoch);
      write_text(dir / "metrics.csv", train::metrics_csv(r.metrics));
      write_json_file(dir / "agent.json", agent_checkpoint(r.agent, d.meta().env_id, nullptr));
    } else if (ev->parsed()) {
      RunConfig cfg = resolve(eval_c);
      const fs::path dir = out_dir(eval_c);
      write_config(dir, cfg);
      const nlohmann::json ck = read_json_file(checkpoint);
      agent::AgentState a;
      std::string env_name;
      try {
        if (ck.at("format").get<std::string>() != "cped-agent" || ck.at("version").get<int>() != 1) {
          throw ValidationError(checkpoint + " is not a version-1 agent checkpoint");
        }
        env_name = ck.at("env").get<std::string>();
        a = agent::AgentState::from_json(ck.at("agent"));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(checkpoint + ": " + e.what());
      }
      const auto env = envs::make_env(env_name);
      const std::size_t n = episodes.value_or(cfg.train.eval_episodes);
      const auto r = train::evaluate_agent(a, *env, n, Rng(cfg.seed).stream("eval"));
      write_json_file(dir / "report.json", {{"episodes", n},
                                            {"mean_return", r.mean_return},
                                            {"std_return", r.std_return},
                                            {"returns", r.returns}});
      std::fprintf(stderr, "mean return %.3f +- %.3f over %zu episodes\n", r.mean_return,
                   r.std_return, n);
    } else if (toy->parsed()) {
      RunConfig cfg = resolve(toy_c);
      if (!setting.empty()) cfg.toy.setting = toy_setting_from_string(setting);
      if (lambda >= 0.0) cfg.train.gan.lambda = lambda;
      cfg.validate();
      const fs::path dir = out_dir(toy_c);
      write_config(dir, cfg);
      try {
        const ToyReport r = toy_density_experiment(cfg, cfg.seed);
        write_json_file(dir / "report.json", r.to_json());
        write_text(dir / "loss_trace.csv", loss_trace_csv(r.trace));
        std::string table = "| column | mean log-likelihood |\n|---|---|\n";
        table += "| trained flow | " + format_double(r.model_mean_log_likelihood) + " |\n";
        table += "| analytic truth (held-out) | " + format_double(r.truth_mean_log_likelihood) + " |\n";
        table += "| analytic truth (expected) | " + format_double(r.truth_expected_log_likelihood) + " |\n";
        table += "| moment-matched Gaussian | " + format_double(r.gaussian_baseline_mean_log_likelihood) + " |\n";
        write_text(dir / "table.md", table);
        std::cout << table;
      } catch (const train::DivergenceError& e) {
        write_text(dir / "loss_trace.csv", loss_trace_csv(e.trace));
        throw RuntimeFailure(std::string(e.what()) + "; loss trace in " +
                             (dir / "loss_trace.csv").string());
      }
    } else if (kl->parsed()) {
      RunConfig cfg = resolve(kl_c);
      if (!setting.empty()) cfg.kl_rate.setting = toy_setting_from_string(setting);
      const fs::path dir = out_dir(kl_c);
      write_config(dir, cfg);
      const KlRateReport r = kl_rate_check(cfg, cfg.seed);
      write_json_file(dir / "report.json", r.to_json());
      for (const auto& row : r.rows) {
        std::fprintf(stderr, "n %zu  median KL %.4f\n", row.n, row.median);
      }
      if (r.estimator_violation) {
        throw RuntimeFailure("KL estimate below minus one standard error; see report.json");
      }
    } else if (tab->parsed()) {
      RunConfig cfg = resolve(tab_c);
      const fs::path dir = out_dir(tab_c);
      write_config(dir, cfg);
      const TabularReport r = tabular_check(cfg.tabular);
      write_json_file(dir / "report.json", r.to_json());
      if (!r.contraction_holds) {
        std::cerr << "contraction violated at iteration " << r.violation_iteration
                  << "; iterate: " << nlohmann::json(r.violation_values).dump() << "\n";
        return 2;
      }
      std::fprintf(stderr, "%zu iterations, worst ratio %.6f\n", r.iterations, r.worst_ratio);
    } else if (plot->parsed()) {
      RunConfig cfg = resolve(plot_c);
      const fs::path dir = out_dir(plot_c);
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto files = emit_plots(dirs, dir);
      write_config(dir, cfg);
      std::fprintf(stderr, "wrote %zu plots to %s\n", files.size(), dir.string().c_str());
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace cped::harness
