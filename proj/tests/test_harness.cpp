#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cped/analysis.hpp"
#include "cped/cli.hpp"
#include "cped/config.hpp"
#include "cped/error.hpp"
#include "cped/plots.hpp"
#include "cped/serialize.hpp"
#include "doctest.h"

using namespace cped;
using namespace cped::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cped_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("default config validates and carries the reference hyperparameters") {
  const RunConfig c;
  c.validate();
  CHECK(c.train.batch_size == 256);
  CHECK(c.train.pretrain_steps == 20000);
  CHECK(c.train.gan.lambda == 1.0);
  CHECK(c.train.gan.generator_lr == 1e-4);
  CHECK(c.train.flow.hidden_width == 750);
  CHECK(c.train.flow.conditioner_hidden_layers == 3);
  CHECK(c.train.agent.tau == 0.005);
  CHECK(c.train.agent.policy_noise == 0.2);
  CHECK(c.train.agent.policy_frequency == 2);
  CHECK(c.train.agent.hidden == std::vector<std::size_t>{256, 256});
  CHECK(c.train.epoch_length == 1000);
}

TEST_CASE("config round trips and overrides only what is given") {
  RunConfig c;
  c.seed = 9;
  c.train.gan.kind = flow::GanKind::Bce;
  c.train.alpha_schedule = agent::AlphaSchedule({{0, 4.0}, {7, 1.0}});
  c.kl_rate.sample_sizes = {10, 20};
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  const RunConfig partial = RunConfig::from_json(nlohmann::json::parse(R"({"agent": {"gamma": 0.9}})"));
  CHECK(partial.train.agent.gamma == 0.9);
  CHECK(partial.train.agent.tau == 0.005);
  CHECK(RunConfig::from_json(nlohmann::json::object()).to_json() == RunConfig{}.to_json());
}

TEST_CASE("config rejects unknown keys, bad types and bad values") {
  auto rejects = [](const char* text, const char* needle) {
    try {
      RunConfig::from_json(nlohmann::json::parse(text));
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
      return;
    }
    FAIL("accepted " << text);
  };
  rejects(R"({"agnet": {}})", "agnet");
  rejects(R"({"agent": {"gama": 0.9}})", "agent.gama");
  rejects(R"({"agent": {"gamma": "high"}})", "agent.gamma");
  rejects(R"({"agent": {"gamma": 1.5}})", "gamma");
  rejects(R"({"gan": {"kind": "vae"}})", "gan.kind");
  rejects(R"({"train": {"batch_size": 1}})", "batch_size");
  rejects(R"({"train": {"alpha_schedule": [[3, 1.0]]}})", "epoch 0");
  rejects(R"({"tabular": {"init": "worst"}})", "tabular.init");
  rejects(R"({"flow": 3})", "flow");
}

TEST_CASE("shipped configs load") {
  const fs::path root = fs::path(CPED_SOURCE_DIR) / "configs";
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path()));
  }
}

TEST_CASE("published schema lists exactly the config keys") {
  std::ifstream in(fs::path(CPED_SOURCE_DIR) / "docs" / "config.schema.json");
  REQUIRE(in);
  const nlohmann::json schema = nlohmann::json::parse(in);
  const nlohmann::json config = RunConfig{}.to_json();
  std::set<std::string> top_schema, top_config;
  for (const auto& [k, v] : schema.at("properties").items()) top_schema.insert(k);
  for (const auto& [k, v] : config.items()) top_config.insert(k);
  CHECK(top_schema == top_config);
  for (const auto& [section, body] : config.items()) {
    if (!body.is_object()) continue;
    std::set<std::string> a, b;
    for (const auto& [k, v] : schema.at("properties").at(section).at("properties").items()) a.insert(k);
    for (const auto& [k, v] : body.items()) b.insert(k);
    CAPTURE(section);
    CHECK(a == b);
  }
}

TEST_CASE("toy densities match closed forms") {
  const ToyDistribution single(ToySetting::SingleGaussian), mix(ToySetting::Mixture);
  CHECK(single.log_density(1.0, 9.0) == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-14));
  // The two mixture components are far apart, so at a mode the log-density is
  // the component's minus log 2 up to exp(-64).
  CHECK(mix.log_density(1.0, 1.0) ==
        doctest::Approx(-std::log(2.0 * M_PI) - std::log(2.0)).epsilon(1e-14));
  CHECK(mix.log_density(5.0, 5.0) ==
        doctest::Approx(-std::log(2.0 * M_PI) - 16.0).epsilon(1e-12));
  CHECK(expected_log_density(ToySetting::SingleGaussian) == doctest::Approx(-2.8379).epsilon(1e-4));
  // Entropy of two well separated unit Gaussians: the single-Gaussian value
  // minus log 2.
  CHECK(std::abs(expected_log_density(ToySetting::Mixture) - (-std::log(2.0 * M_PI) - 1.0 - std::log(2.0))) < 1e-6);
}

TEST_CASE("toy samples have the right moments and the Gaussian baseline matches them") {
  Rng rng(3);
  const Tensor xs = ToyDistribution(ToySetting::Mixture).sample(200000, rng);
  const GaussianFit g = GaussianFit::fit(xs);
  CHECK(g.mx == doctest::Approx(5.0).epsilon(0.01));
  CHECK(g.my == doctest::Approx(5.0).epsilon(0.01));
  // Var = 1 + 16 per axis, covariance 16.
  CHECK(g.sxx == doctest::Approx(17.0).epsilon(0.02));
  CHECK(g.sxy == doctest::Approx(16.0).epsilon(0.02));
  Rng rng2(4);
  const Tensor held = ToyDistribution(ToySetting::Mixture).sample(50000, rng2);
  // Exact Gaussian cross-entropy for the moment-matched fit: log(2 pi) + log|S| / 2 + 1.
  const double expected = -std::log(2.0 * M_PI) - 0.5 * std::log(17.0 * 17.0 - 16.0 * 16.0) - 1.0;
  CHECK(mean_of(g.log_density(held)) == doctest::Approx(expected).epsilon(0.01));
}

TEST_CASE("KL estimate is zero when the model is the truth") {
  const ToyDistribution p(ToySetting::Mixture);
  Rng rng(5);
  const Tensor xs = p.sample(5000, rng);
  const auto lp = [&](const Tensor& x) { return p.log_density(x); };
  const KlEstimate e = kl_estimate(xs, lp, lp);
  CHECK(e.value == 0.0);
  CHECK(e.standard_error == 0.0);

  // A unit shift of one mean gives KL 1/2 exactly for the single Gaussian.
  const ToyDistribution q(ToySetting::SingleGaussian);
  const Tensor ys = q.sample(20000, rng);
  const KlEstimate shifted = kl_estimate(ys, [&](const Tensor& x) { return q.log_density(x); },
                                         [&](const Tensor& x) {
                                           Tensor moved = x;
                                           for (std::size_t i = 0; i < x.rows(); ++i) moved(i, 0) -= 1.0;
                                           return q.log_density(moved);
                                         });
  CHECK(std::abs(shifted.value - 0.5) < 3.0 * shifted.standard_error + 1e-12);
  CHECK(shifted.value >= -shifted.standard_error);
}

TEST_CASE("kl rate check runs end to end at tiny scale") {
  RunConfig c;
  c.train.flow.hidden_width = 8;
  c.train.flow.conditioner_hidden_layers = 1;
  c.kl_rate.sample_sizes = {50, 200};
  c.kl_rate.seeds = 2;
  c.kl_rate.steps = 3;
  c.kl_rate.batch_size = 32;
  c.kl_rate.eval_samples = 500;
  const KlRateReport r = kl_rate_check(c, 1);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].per_seed.size() == 2);
  CHECK(r.to_json().at("rows").size() == 2);
  CHECK(kl_rate_check(c, 1).to_json() == r.to_json());
}

TEST_CASE("gridworld dynamics") {
  const GridMdp m(5, 0.99);
  CHECK(m.states() == 25);
  CHECK(m.next(0, 0) == 0);
  CHECK(m.next(0, 2) == 0);
  CHECK(m.next(0, 1) == 5);
  CHECK(m.next(0, 3) == 1);
  CHECK(m.next(24, 0) == 24);
  CHECK(m.reward(24, 0) == 0.0);
  CHECK(m.reward(3, 1) == -1.0);
}

TEST_CASE("value iteration matches the closed-form shortest-path values") {
  const double g = 0.99;
  const GridMdp m(5, g);
  const auto v = value_iteration(m);
  for (std::size_t s = 0; s < 25; ++s) {
    const std::size_t d = (4 - s / 5) + (4 - s % 5);
    // d steps at -1 each, then the absorbing goal.
    const double expected = -(1.0 - std::pow(g, static_cast<double>(d))) / (1.0 - g);
    CHECK(std::abs(v[s] - expected) < 1e-10);
  }
}

TEST_CASE("policy iteration contracts toward the optimum") {
  TabularConfig c;
  const TabularReport r = tabular_check(c);
  CHECK(r.contraction_holds);
  CHECK(r.worst_ratio <= 0.99);
  CHECK(r.gaps.front() > 1.0);
  CHECK(r.gaps.back() < 1e-9);
  for (std::size_t k = 0; k + 1 < r.gaps.size(); ++k) CHECK(r.gaps[k + 1] <= 0.99 * r.gaps[k] + 1e-9);

  c.init = "optimal";
  const TabularReport opt = tabular_check(c);
  for (double gap : opt.gaps) CHECK(gap < 1e-9);
  CHECK(opt.iterations == 1);

  c.init = "uniform";
  c.gamma = 0.0;
  const TabularReport myopic = tabular_check(c);
  CHECK(myopic.converged_iteration <= 1);
  CHECK(myopic.contraction_holds);
}

TEST_CASE("metrics csv parsing") {
  const MetricsTable t = parse_metrics_csv("epoch,a,b\n0,1.5,\n1,2,3\n", "x");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == 1.5);
  CHECK_FALSE(t.rows[0][2].has_value());
  CHECK(t.rows[1][2] == 3.0);
  CHECK_THROWS_WITH_AS(parse_metrics_csv("", "m.csv"), doctest::Contains("0 rows"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_metrics_csv("epoch,a\n", "m.csv"), doctest::Contains("0 data rows"),
                       ValidationError);
  CHECK_THROWS_AS(parse_metrics_csv("epoch,a\n0,1,2\n", "m.csv"), ValidationError);
  CHECK_THROWS_AS(parse_metrics_csv("epoch,a\n0,abc\n", "m.csv"), ValidationError);
}

TEST_CASE("curves aggregate across runs and draw a band only for several") {
  const MetricsTable a = parse_metrics_csv("epoch,r\n0,1\n1,3\n", "a");
  const MetricsTable b = parse_metrics_csv("epoch,r\n0,3\n1,5\n", "b");
  const Curve c = aggregate({a, b}, "r");
  CHECK(c.mean == std::vector<double>{2.0, 4.0});
  CHECK(c.std == std::vector<double>{1.0, 1.0});
  CHECK(render_svg(c, "r", "r").find("class=\"band\"") != std::string::npos);
  const Curve single = aggregate({a}, "r");
  const std::string svg = render_svg(single, "r", "r");
  CHECK(svg.find("class=\"band\"") == std::string::npos);
  CHECK(svg.find("class=\"mean\"") != std::string::npos);
}

TEST_CASE("cli exit codes and usage") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"bogus"}) == 1);
  CHECK(run_cli({"gen-data", "--frobnicate", "1"}) == 1);
  CHECK(run_cli({"train", "--out", (dir / "t").string()}) == 1);
  write(dir / "bad.json", R"({"agent": {"gama": 1}})");
  CHECK(run_cli({"tabular-check", "--config", (dir / "bad.json").string(), "--out",
                 (dir / "tab").string()}) == 1);
  CHECK(run_cli({"train", "--data", (dir / "missing").string(), "--out", (dir / "t").string()}) == 1);
}

TEST_CASE("cli gen-data, train and plot produce deterministic outputs") {
  const fs::path dir = scratch("pipeline");
  write(dir / "c.json", R"({
    "flow": {"coupling_layers": 2, "conditioner_hidden_layers": 1, "hidden_width": 8},
    "agent": {"hidden": [8, 8]},
    "train": {"batch_size": 16, "pretrain_steps": 3, "joint_steps": 30, "flow_freeze_step": 5,
              "epoch_length": 10, "eval_episodes": 1}
  })");
  const std::string cfg = (dir / "c.json").string();
  REQUIRE(run_cli({"gen-data", "--env", "pointmass2d", "--kind", "medium", "--n", "300", "--seed", "7",
                   "--out", (dir / "d1").string()}) == 0);
  REQUIRE(run_cli({"gen-data", "--env", "pointmass2d", "--kind", "medium", "--n", "300", "--seed", "7",
                   "--out", (dir / "d2").string()}) == 0);
  CHECK(slurp(dir / "d1" / "transitions.jsonl") == slurp(dir / "d2" / "transitions.jsonl"));
  CHECK(slurp(dir / "d1" / "meta.json") == slurp(dir / "d2" / "meta.json"));
  CHECK(fs::exists(dir / "d1" / "config.json"));

  const std::string data = (dir / "d1").string();
  for (const char* run : {"r1", "r2"}) {
    REQUIRE(run_cli({"train", "--config", cfg, "--data", data, "--seed", "3", "--out",
                     (dir / run).string()}) == 0);
  }
  CHECK(slurp(dir / "r1" / "metrics.csv") == slurp(dir / "r2" / "metrics.csv"));
  const nlohmann::json resolved = read_json_file(dir / "r1" / "config.json");
  CHECK(resolved.at("seed") == 3);
  CHECK(resolved.at("data").at("path") == data);
  // The recorded config reproduces the run by itself.
  REQUIRE(run_cli({"train", "--config", (dir / "r1" / "config.json").string(), "--out",
                   (dir / "r3").string()}) == 0);
  CHECK(slurp(dir / "r1" / "metrics.csv") == slurp(dir / "r3" / "metrics.csv"));

  REQUIRE(run_cli({"train-bc", "--config", cfg, "--data", data, "--out", (dir / "bc").string()}) == 0);
  REQUIRE(run_cli({"eval", "--checkpoint", (dir / "r1" / "agent.json").string(), "--episodes", "2",
                   "--out", (dir / "ev").string()}) == 0);
  CHECK(read_json_file(dir / "ev" / "report.json").at("returns").size() == 2);
  REQUIRE(run_cli({"train-density", "--config", cfg, "--data", data, "--out",
                   (dir / "dens").string()}) == 0);
  CHECK(fs::exists(dir / "dens" / "flow.json"));

  REQUIRE(run_cli({"plot", (dir / "r1").string(), (dir / "bc").string(), "--out",
                   (dir / "plots").string()}) == 0);
  CHECK(fs::exists(dir / "plots" / "mean_return.svg"));
  CHECK(fs::exists(dir / "plots" / "mean_target_q.svg"));
  fs::create_directories(dir / "empty");
  write(dir / "empty" / "metrics.csv", "");
  CHECK(run_cli({"plot", (dir / "empty").string(), "--out", (dir / "p2").string()}) == 1);
}

TEST_CASE("cli tabular-check writes its report") {
  const fs::path dir = scratch("tabular");
  REQUIRE(run_cli({"tabular-check", "--out", dir.string()}) == 0);
  const nlohmann::json r = read_json_file(dir / "report.json");
  CHECK(r.at("contraction_holds") == true);
  CHECK(r.at("worst_ratio").get<double>() <= 0.99);
}
