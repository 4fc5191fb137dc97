#include "cped/dataset.hpp"

#include <fstream>
#include <sstream>

#include "cped/error.hpp"
#include "cped/serialize.hpp"

namespace cped::data {

OfflineDataset::OfflineDataset(DatasetMeta meta, Tensor s, Tensor a, Tensor r, Tensor s_next,
                               Tensor done)
    : meta_(std::move(meta)),
      s_(std::move(s)),
      a_(std::move(a)),
      r_(std::move(r)),
      s_next_(std::move(s_next)),
      done_(std::move(done)) {
  validate();
}

void OfflineDataset::validate() const {
  const std::size_t n = s_.rows();
  if (a_.rows() != n || r_.rows() != n || s_next_.rows() != n || done_.rows() != n) {
    throw ValidationError("dataset: columns have different lengths");
  }
  if (s_.cols() != meta_.state_dim || s_next_.cols() != meta_.state_dim ||
      a_.cols() != meta_.action_dim || r_.cols() != 1 || done_.cols() != 1) {
    throw ValidationError("dataset: column widths disagree with meta dims");
  }
  require_finite(s_, "dataset states");
  require_finite(a_, "dataset actions");
  require_finite(r_, "dataset rewards");
  require_finite(s_next_, "dataset next states");
  for (double d : done_.data()) {
    if (d != 0.0 && d != 1.0) throw ValidationError("dataset: done must be 0 or 1");
  }
  if (!meta_.normalized) {
    for (double v : a_.data()) {
      if (v < -1.0 || v > 1.0) throw ValidationError("dataset: action outside [-1, 1]");
    }
  }
  for (std::size_t i = 0; i < meta_.episode_starts.size(); ++i) {
    if (meta_.episode_starts[i] >= std::max<std::size_t>(n, 1) ||
        (i > 0 && meta_.episode_starts[i] <= meta_.episode_starts[i - 1])) {
      throw ValidationError("dataset: episode boundaries are not increasing row indices");
    }
  }
}

Tensor OfflineDataset::state_actions() const {
  Tensor out(size(), meta_.state_dim + meta_.action_dim);
  for (std::size_t r = 0; r < size(); ++r) {
    for (std::size_t c = 0; c < meta_.state_dim; ++c) out(r, c) = s_(r, c);
    for (std::size_t c = 0; c < meta_.action_dim; ++c) out(r, meta_.state_dim + c) = a_(r, c);
  }
  return out;
}

void OfflineDataset::refit_stats() {
  meta_.state_stats = NormalizationStats::fit(s_);
  meta_.action_stats = NormalizationStats::fit(a_);
  meta_.reward_stats = NormalizationStats::fit(r_);
}

Batch OfflineDataset::rows(std::span<const std::size_t> idx) const {
  auto gather = [&](const Tensor& t) {
    Tensor out(idx.size(), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < t.cols(); ++c) out(i, c) = t(idx[i], c);
    }
    return out;
  };
  return {gather(s_), gather(a_), gather(r_), gather(s_next_), gather(done_)};
}

Batch OfflineDataset::sample_batch(std::size_t batch_size, Rng& rng) const {
  if (size() == 0) throw ValidationError("sample_batch: empty dataset");
  if (batch_size == 0 || batch_size > size()) {
    throw ValidationError("sample_batch: batch size " + std::to_string(batch_size) +
                          " must be in [1, " + std::to_string(size()) + "]");
  }
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t& i : idx) i = rng.index(size());
  return rows(idx);
}

std::vector<double> OfflineDataset::episode_returns() const {
  std::vector<double> out;
  for (std::size_t e = 0; e < meta_.episode_starts.size(); ++e) {
    const std::size_t end = e + 1 < meta_.episode_starts.size() ? meta_.episode_starts[e + 1] : size();
    double total = 0.0;
    for (std::size_t r = meta_.episode_starts[e]; r < end; ++r) total += r_[r];
    out.push_back(total);
  }
  return out;
}

OfflineDataset generate_dataset(const envs::Env& env, envs::BehaviorKind kind, std::size_t n,
                                std::uint64_t seed) {
  if (n == 0) throw ValidationError("generate_dataset: n must be >= 1");
  const std::size_t ds = env.state_dim(), da = env.action_dim();
  std::vector<double> s, a, r, sn, done;
  DatasetMeta meta;
  meta.env_id = env.id();
  meta.state_dim = ds;
  meta.action_dim = da;
  meta.behavior = envs::to_string(kind);
  meta.seed = seed;
  const Rng root = Rng(seed).stream("episode");
  envs::BehaviorPolicy pi(kind, env);
  std::size_t count = 0;
  for (std::size_t e = 0; count < n; ++e) {
    Rng ep = root.stream(e);
    pi.begin_episode(ep);
    meta.episode_starts.push_back(count);
    std::vector<double> state = env.reset(ep);
    for (std::size_t t = 0;; ++t) {
      const std::vector<double> act = pi.act(state, ep);
      envs::StepResult st = env.step(state, act, t);
      s.insert(s.end(), state.begin(), state.end());
      a.insert(a.end(), act.begin(), act.end());
      r.push_back(st.reward);
      sn.insert(sn.end(), st.s_next.begin(), st.s_next.end());
      done.push_back(st.done ? 1.0 : 0.0);
      ++count;
      state = std::move(st.s_next);
      if (st.done) break;
    }
  }
  OfflineDataset d(std::move(meta), Tensor(count, ds, std::move(s)), Tensor(count, da, std::move(a)),
                   Tensor(count, 1, std::move(r)), Tensor(count, ds, std::move(sn)),
                   Tensor(count, 1, std::move(done)));
  d.refit_stats();
  return d;
}

OfflineDataset normalize(const OfflineDataset& d) {
  if (d.meta().normalized) throw ValidationError("normalize: dataset is already normalized");
  DatasetMeta m = d.meta();
  m.normalized = true;
  return OfflineDataset(m, m.state_stats.normalize(d.states()), m.action_stats.normalize(d.actions()),
                        m.reward_stats.normalize(d.rewards()),
                        m.state_stats.normalize(d.next_states()), d.dones());
}

OfflineDataset denormalize(const OfflineDataset& d) {
  if (!d.meta().normalized) throw ValidationError("denormalize: dataset is not normalized");
  DatasetMeta m = d.meta();
  m.normalized = false;
  return OfflineDataset(m, m.state_stats.denormalize(d.states()),
                        m.action_stats.denormalize(d.actions()),
                        m.reward_stats.denormalize(d.rewards()),
                        m.state_stats.denormalize(d.next_states()), d.dones());
}

nlohmann::json meta_to_json(const DatasetMeta& m, std::size_t transitions) {
  return {{"format_version", kFormatVersion},
          {"env", m.env_id},
          {"state_dim", m.state_dim},
          {"action_dim", m.action_dim},
          {"behavior", m.behavior},
          {"seed", m.seed},
          {"transitions", transitions},
          {"episodes", m.episode_starts.size()},
          {"episode_starts", m.episode_starts},
          {"normalized", m.normalized},
          {"stats",
           {{"state", m.state_stats.to_json()},
            {"action", m.action_stats.to_json()},
            {"reward", m.reward_stats.to_json()}}}};
}

namespace {

void append_row(std::string& out, const Tensor& t, std::size_t r) {
  out += '[';
  for (std::size_t c = 0; c < t.cols(); ++c) {
    if (c) out += ',';
    out += format_double(t(r, c));
  }
  out += ']';
}

std::vector<double> read_vector(const nlohmann::json& j, std::size_t dim, const char* key,
                                std::size_t line) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != dim) {
    throw ValidationError("transitions.jsonl line " + std::to_string(line) + ": '" + key +
                          "' must be an array of " + std::to_string(dim) + " numbers");
  }
  return v.get<std::vector<double>>();
}

}  // namespace

void save_dataset(const OfflineDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "meta.json", meta_to_json(d.meta(), d.size()));
  std::string text;
  text.reserve(d.size() * 160);
  for (std::size_t r = 0; r < d.size(); ++r) {
    text += "{\"s\":";
    append_row(text, d.states(), r);
    text += ",\"a\":";
    append_row(text, d.actions(), r);
    text += ",\"r\":";
    text += format_double(d.rewards()[r]);
    text += ",\"s_next\":";
    append_row(text, d.next_states(), r);
    text += ",\"done\":";
    text += d.dones()[r] != 0.0 ? "true" : "false";
    text += "}\n";
  }
  write_text_file(dir / "transitions.jsonl", text);
}

OfflineDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ValidationError("dataset directory '" + dir.string() + "' does not exist");
  }
  const nlohmann::json meta_j = read_json_file(dir / "meta.json");
  DatasetMeta m;
  std::size_t n = 0;
  try {
    const int version = meta_j.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw ValidationError("dataset format version " + std::to_string(version) +
                            " is not supported (expected " + std::to_string(kFormatVersion) + ")");
    }
    m.env_id = meta_j.at("env").get<std::string>();
    m.state_dim = meta_j.at("state_dim").get<std::size_t>();
    m.action_dim = meta_j.at("action_dim").get<std::size_t>();
    m.behavior = meta_j.at("behavior").get<std::string>();
    m.seed = meta_j.at("seed").get<std::uint64_t>();
    m.episode_starts = meta_j.at("episode_starts").get<std::vector<std::size_t>>();
    m.normalized = meta_j.at("normalized").get<bool>();
    m.state_stats = NormalizationStats::from_json(meta_j.at("stats").at("state"));
    m.action_stats = NormalizationStats::from_json(meta_j.at("stats").at("action"));
    m.reward_stats = NormalizationStats::from_json(meta_j.at("stats").at("reward"));
    n = meta_j.at("transitions").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  std::ifstream in(dir / "transitions.jsonl", std::ios::binary);
  if (!in) throw ValidationError("cannot open " + (dir / "transitions.jsonl").string());
  std::vector<double> s, a, r, sn, done;
  s.reserve(n * m.state_dim);
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++count;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      auto vs = read_vector(j, m.state_dim, "s", count);
      auto va = read_vector(j, m.action_dim, "a", count);
      auto vn = read_vector(j, m.state_dim, "s_next", count);
      s.insert(s.end(), vs.begin(), vs.end());
      a.insert(a.end(), va.begin(), va.end());
      sn.insert(sn.end(), vn.begin(), vn.end());
      r.push_back(j.at("r").get<double>());
      done.push_back(j.at("done").get<bool>() ? 1.0 : 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("transitions.jsonl line " + std::to_string(count) + ": " + e.what());
    }
  }
  if (count != n) {
    throw ValidationError("dataset: meta.json declares " + std::to_string(n) +
                          " transitions but transitions.jsonl has " + std::to_string(count));
  }
  const std::size_t ds = m.state_dim, da = m.action_dim;
  return OfflineDataset(std::move(m), Tensor(n, ds, std::move(s)), Tensor(n, da, std::move(a)),
                        Tensor(n, 1, std::move(r)), Tensor(n, ds, std::move(sn)),
                        Tensor(n, 1, std::move(done)));
}

}  // namespace cped::data
