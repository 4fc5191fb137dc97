#include "cped/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cped/behavior_density.hpp"
#include "cped/error.hpp"
#include "cped/serialize.hpp"
#include "cped/train.hpp"

namespace cped::harness {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Tensor flow_log_density(const train::DensityResult& d, const Tensor& xy) {
  // The toy data is split 1 + 1 only because the service expects (s, a).
  return density::DensityService::view(d.gan.model(), d.stats, 1).log_likelihood(xy);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string loss_trace_csv(const std::vector<flow::GanLossReport>& trace) {
  std::string out = "row,discriminator_loss,generator_loss,mean_log_likelihood\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i) + ',' + format_double(trace[i].discriminator_loss) + ',' +
           format_double(trace[i].generator_loss) + ',' +
           format_double(trace[i].mean_log_likelihood) + '\n';
  }
  return out;
}

ToyDistribution::ToyDistribution(ToySetting setting) : setting_(setting) {
  if (setting == ToySetting::SingleGaussian) {
    means_ = {{1.0, 9.0}};
  } else {
    means_ = {{1.0, 1.0}, {9.0, 9.0}};
  }
}

double ToyDistribution::log_density(double x, double y) const {
  auto component = [&](const std::pair<double, double>& m) {
    const double dx = x - m.first, dy = y - m.second;
    return -kLog2Pi - 0.5 * (dx * dx + dy * dy);
  };
  if (means_.size() == 1) return component(means_[0]);
  return log_sum_exp2(component(means_[0]), component(means_[1])) - std::numbers::ln2;
}

Tensor ToyDistribution::log_density(const Tensor& xy) const {
  if (xy.cols() != 2) throw ValidationError("toy density expects n x 2 input");
  Tensor out(xy.rows(), 1);
  for (std::size_t i = 0; i < xy.rows(); ++i) out[i] = log_density(xy(i, 0), xy(i, 1));
  return out;
}

Tensor ToyDistribution::sample(std::size_t n, Rng& rng) const {
  Tensor out(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = means_.size() == 1 ? means_[0] : means_[rng.uniform() < 0.5 ? 0 : 1];
    out(i, 0) = m.first + rng.normal();
    out(i, 1) = m.second + rng.normal();
  }
  return out;
}

double expected_log_density(ToySetting setting) {
  if (setting == ToySetting::SingleGaussian) return -kLog2Pi - 1.0;
  const ToyDistribution p(setting);
  const double lo = -9.0, hi = 19.0, h = 0.02;
  const auto cells = static_cast<std::size_t>(std::llround((hi - lo) / h));
  double sum = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const double x = lo + (static_cast<double>(i) + 0.5) * h;
    for (std::size_t j = 0; j < cells; ++j) {
      const double y = lo + (static_cast<double>(j) + 0.5) * h;
      const double lp = p.log_density(x, y);
      sum += std::exp(lp) * lp;
    }
  }
  return sum * h * h;
}

GaussianFit GaussianFit::fit(const Tensor& xy) {
  if (xy.cols() != 2 || xy.rows() < 2) throw ValidationError("Gaussian fit expects n >= 2 rows of 2");
  GaussianFit g;
  const double n = static_cast<double>(xy.rows());
  g.mx = g.my = 0.0;
  for (std::size_t i = 0; i < xy.rows(); ++i) {
    g.mx += xy(i, 0);
    g.my += xy(i, 1);
  }
  g.mx /= n;
  g.my /= n;
  g.sxx = g.sxy = g.syy = 0.0;
  for (std::size_t i = 0; i < xy.rows(); ++i) {
    const double dx = xy(i, 0) - g.mx, dy = xy(i, 1) - g.my;
    g.sxx += dx * dx;
    g.sxy += dx * dy;
    g.syy += dy * dy;
  }
  g.sxx /= n;
  g.sxy /= n;
  g.syy /= n;
  return g;
}

Tensor GaussianFit::log_density(const Tensor& xy) const {
  const double det = sxx * syy - sxy * sxy;
  if (!(det > 0.0)) throw NumericError("Gaussian fit has a singular covariance");
  Tensor out(xy.rows(), 1);
  for (std::size_t i = 0; i < xy.rows(); ++i) {
    const double dx = xy(i, 0) - mx, dy = xy(i, 1) - my;
    const double q = (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det;
    out[i] = -kLog2Pi - 0.5 * std::log(det) - 0.5 * q;
  }
  return out;
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

nlohmann::json ToyReport::to_json() const {
  return {{"setting", to_string(setting)},
          {"train_samples", train_samples},
          {"heldout_samples", heldout_samples},
          {"lambda", lambda},
          {"model_mean_log_likelihood", model_mean_log_likelihood},
          {"truth_mean_log_likelihood", truth_mean_log_likelihood},
          {"truth_expected_log_likelihood", truth_expected_log_likelihood},
          {"gaussian_baseline_mean_log_likelihood", gaussian_baseline_mean_log_likelihood},
          {"model_beats_baseline", model_beats_baseline}};
}

ToyReport toy_density_experiment(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  const ToyConfig& toy = config.toy;
  const ToyDistribution p(toy.setting);
  const Rng root(seed);
  Rng train_rng = root.stream("toy.train"), heldout_rng = root.stream("toy.heldout");
  const Tensor train_xy = p.sample(toy.samples, train_rng);
  const Tensor heldout = p.sample(toy.heldout, heldout_rng);

  const train::DensityResult d =
      train::train_density(train_xy, config.train.flow, config.train.gan,
                           std::min(toy.batch_size, train_xy.rows()), toy.steps,
                           root.stream("toy.flow"), 100);
  ToyReport r;
  r.setting = toy.setting;
  r.train_samples = toy.samples;
  r.heldout_samples = toy.heldout;
  r.lambda = config.train.gan.lambda;
  r.model_mean_log_likelihood = mean_of(flow_log_density(d, heldout));
  r.truth_mean_log_likelihood = mean_of(p.log_density(heldout));
  r.truth_expected_log_likelihood = expected_log_density(toy.setting);
  r.gaussian_baseline_mean_log_likelihood = mean_of(GaussianFit::fit(train_xy).log_density(heldout));
  r.model_beats_baseline = r.model_mean_log_likelihood > r.gaussian_baseline_mean_log_likelihood;
  r.trace = d.trace;
  if (!std::isfinite(r.model_mean_log_likelihood)) {
    throw train::DivergenceError("toy density: trained model gives a non-finite log-likelihood",
                                 d.trace);
  }
  return r;
}

KlEstimate kl_estimate(const Tensor& samples,
                       const std::function<Tensor(const Tensor&)>& log_p_star,
                       const std::function<Tensor(const Tensor&)>& log_q) {
  const Tensor lp = log_p_star(samples), lq = log_q(samples);
  const std::size_t n = lp.size();
  if (n < 2 || lq.size() != n) throw ValidationError("kl_estimate needs >= 2 matching samples");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += lp[i] - lq[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = lp[i] - lq[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  const KlEstimate out{mean, std::sqrt(var / static_cast<double>(n))};
  if (!std::isfinite(out.value)) throw NumericError("kl_estimate: non-finite estimate");
  return out;
}

nlohmann::json KlRateReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const KlRateRow& row : rows) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const KlEstimate& e : row.per_seed) seeds.push_back({{"kl", e.value}, {"se", e.standard_error}});
    rows_j.push_back({{"n", row.n},
                      {"median_kl", row.median},
                      {"max_se", row.median_standard_error},
                      {"per_seed", seeds}});
  }
  return {{"setting", to_string(setting)},
          {"rows", rows_j},
          {"non_increasing_within_se", non_increasing_within_se},
          {"median_decreases_first_to_last", median_decreases_first_to_last},
          {"estimator_violation", estimator_violation}};
}

KlRateReport kl_rate_check(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  const KlRateConfig& kc = config.kl_rate;
  const ToyDistribution p(kc.setting);
  const Rng root(seed);
  const auto log_p = [&](const Tensor& x) { return p.log_density(x); };
  KlRateReport report;
  report.setting = kc.setting;
  for (std::size_t n : kc.sample_sizes) {
    KlRateRow row;
    row.n = n;
    std::vector<double> values;
    for (std::size_t s = 0; s < kc.seeds; ++s) {
      const Rng run = root.stream("kl").stream(n).stream(s);
      Rng data_rng = run.stream("train"), eval_rng = run.stream("eval");
      const Tensor xy = p.sample(n, data_rng);
      const train::DensityResult d =
          train::train_density(xy, config.train.flow, config.train.gan,
                               std::min(kc.batch_size, n), kc.steps, run.stream("flow"), 0);
      const Tensor fresh = p.sample(kc.eval_samples, eval_rng);
      const KlEstimate e = kl_estimate(fresh, log_p, [&](const Tensor& x) { return flow_log_density(d, x); });
      if (e.value < -e.standard_error) report.estimator_violation = true;
      row.per_seed.push_back(e);
      values.push_back(e.value);
      row.median_standard_error = std::max(row.median_standard_error, e.standard_error);
    }
    row.median = median(values);
    report.rows.push_back(row);
  }
  report.non_increasing_within_se = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    const KlRateRow &prev = report.rows[i - 1], &cur = report.rows[i];
    if (cur.median > prev.median + std::max(prev.median_standard_error, cur.median_standard_error)) {
      report.non_increasing_within_se = false;
    }
  }
  report.median_decreases_first_to_last = report.rows.back().median < report.rows.front().median;
  return report;
}

GridMdp::GridMdp(std::size_t size, double gamma) : size_(size), gamma_(gamma) {
  if (size < 2) throw ValidationError("gridworld size must be >= 2");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gridworld gamma must lie in [0, 1)");
}

std::size_t GridMdp::next(std::size_t s, std::size_t a) const {
  if (s == goal()) return s;
  const std::size_t r = s / size_, c = s % size_;
  switch (a) {
    case 0: return r > 0 ? s - size_ : s;
    case 1: return r + 1 < size_ ? s + size_ : s;
    case 2: return c > 0 ? s - 1 : s;
    default: return c + 1 < size_ ? s + 1 : s;
  }
}

double GridMdp::reward(std::size_t s, std::size_t) const { return s == goal() ? 0.0 : -1.0; }

std::vector<double> value_iteration(const GridMdp& mdp) {
  const std::size_t n = mdp.states();
  std::vector<double> v(n, 0.0), next(n);
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double residual = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double best = -1e300;
      for (std::size_t a = 0; a < GridMdp::kActions; ++a) {
        best = std::max(best, mdp.reward(s, a) + mdp.gamma() * v[mdp.next(s, a)]);
      }
      next[s] = best;
      residual = std::max(residual, std::abs(best - v[s]));
    }
    v.swap(next);
    if (residual < 1e-13) return v;
  }
  throw RuntimeFailure("value iteration did not converge");
}

namespace {

using Policy = std::vector<std::vector<double>>;  // states x actions

// Solves (I - gamma P_pi) v = r_pi by Gaussian elimination with partial pivoting.
std::vector<double> evaluate_exact(const GridMdp& mdp, const Policy& pi) {
  const std::size_t n = mdp.states();
  std::vector<std::vector<double>> m(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t s = 0; s < n; ++s) {
    m[s][s] = 1.0;
    for (std::size_t a = 0; a < GridMdp::kActions; ++a) {
      m[s][mdp.next(s, a)] -= mdp.gamma() * pi[s][a];
      m[s][n] += pi[s][a] * mdp.reward(s, a);
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    }
    std::swap(m[c], m[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c || m[r][c] == 0.0) continue;
      const double f = m[r][c] / m[c][c];
      for (std::size_t k = c; k <= n; ++k) m[r][k] -= f * m[c][k];
    }
  }
  std::vector<double> v(n);
  for (std::size_t s = 0; s < n; ++s) v[s] = m[s][n] / m[s][s];
  return v;
}

// Greedy among actions the behavior policy supports; ties go to the lowest index.
Policy improve(const GridMdp& mdp, const std::vector<double>& v, const Policy& behavior) {
  Policy pi(mdp.states(), std::vector<double>(GridMdp::kActions, 0.0));
  for (std::size_t s = 0; s < mdp.states(); ++s) {
    std::size_t best = GridMdp::kActions;
    double best_q = -1e300;
    for (std::size_t a = 0; a < GridMdp::kActions; ++a) {
      if (behavior[s][a] <= 0.0) continue;
      const double q = mdp.reward(s, a) + mdp.gamma() * v[mdp.next(s, a)];
      if (q > best_q + 1e-12) {
        best_q = q;
        best = a;
      }
    }
    pi[s][best] = 1.0;
  }
  return pi;
}

double sup_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, std::abs(a[i] - b[i]));
  return g;
}

}  // namespace

nlohmann::json TabularReport::to_json() const {
  nlohmann::json j = {{"size", size},
                      {"gamma", gamma},
                      {"init", init},
                      {"iterations", iterations},
                      {"converged_iteration", converged_iteration},
                      {"gaps", gaps},
                      {"ratios", ratios},
                      {"worst_ratio", worst_ratio},
                      {"contraction_holds", contraction_holds},
                      {"v_star", v_star}};
  if (!contraction_holds) {
    j["violation_iteration"] = violation_iteration;
    j["violation_values"] = violation_values;
  }
  return j;
}

TabularReport tabular_check(const TabularConfig& config) {
  const GridMdp mdp(config.size, config.gamma);
  TabularReport r;
  r.size = config.size;
  r.gamma = config.gamma;
  r.init = config.init;
  r.v_star = value_iteration(mdp);
  const Policy behavior(mdp.states(), std::vector<double>(GridMdp::kActions, 0.25));
  Policy pi = config.init == "optimal" ? improve(mdp, r.v_star, behavior) : behavior;
  // Gaps below this are solver round-off, not policy error.
  const double tol = 1e-9;
  std::vector<double> v = evaluate_exact(mdp, pi);
  r.gaps.push_back(sup_gap(v, r.v_star));
  for (std::size_t k = 0; k < config.max_iterations; ++k) {
    const Policy next = improve(mdp, v, behavior);
    const std::vector<double> v_next = evaluate_exact(mdp, next);
    const double gap = sup_gap(v_next, r.v_star);
    const double prev = r.gaps.back();
    r.gaps.push_back(gap);
    r.ratios.push_back(prev > tol ? gap / prev : 0.0);
    r.worst_ratio = std::max(r.worst_ratio, r.ratios.back());
    ++r.iterations;
    if (gap > config.gamma * prev + tol && r.contraction_holds) {
      r.contraction_holds = false;
      r.violation_iteration = k + 1;
      r.violation_values = v_next;
    }
    const bool stable = next == pi;
    pi = next;
    v = v_next;
    if (stable) break;
  }
  while (r.converged_iteration + 1 < r.gaps.size() && r.gaps[r.converged_iteration] > tol) {
    ++r.converged_iteration;
  }
  return r;
}

}  // namespace cped::harness
