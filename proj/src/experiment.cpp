// Copyright 2026 The DNR Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dnr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "dnr/error.hpp"
#include "dnr/noise.hpp"
#include "dnr/rng.hpp"

namespace dnr::experiment {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were used so the rest can
// be rejected with their full path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type (" +
                        std::string(it->type_name()) + ")");
    }
  }

  // Missing sections read as empty objects.
  Section sub(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, where(key));
  }

  const json* raw(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError("unknown key " + where(key));
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Wraps a validator so its message carries the field path.
template <typename F>
void check(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

// ---- config ------------------------------------------------------------

retriever::TrainOptions ExperimentConfig::retriever_options() const {
  auto o = retriever;
  o.seed = data.seed;
  return o;
}

objectives::TrainOptions ExperimentConfig::train_options() const {
  auto o = reranker.train;
  o.seed = data.seed;
  o.k = data.rerank.k;
  return o;
}

void ExperimentConfig::validate() const {
  require(data.source == "synthetic" || data.source == "csv", "data.source",
          "must be \"synthetic\" or \"csv\"");
  if (data.source == "csv") {
    require(!data.csv_path.empty(), "data.csv_path", "required for csv source");
    if (!std::filesystem::exists(data.csv_path))
      throw MissingInputError("data.csv_path: no such file " + data.csv_path);
  } else {
    const auto& s = data.synthetic;
    require(s.users >= 10, "data.synthetic.users", "must be >= 10");
    require(s.items >= 10, "data.synthetic.items", "must be >= 10");
    require(s.latent_dim >= 2, "data.synthetic.latent_dim", "must be >= 2");
    require(s.factor_scale > 0.0, "data.synthetic.factor_scale", "must be positive");
    require(s.channel.sigma >= 0.0, "data.synthetic.noise_sigma", "must be >= 0");
    require(s.exposure_events == data.rerank.k, "data.synthetic.exposure_events",
            "must equal data.k");
    require(s.history_events + s.exposure_events <= s.items,
            "data.synthetic.history_events", "exposure exceeds the item count");
  }
  require(data.min_interactions >= 1, "data.min_interactions", "must be >= 1");
  require(data.split_ratio > 0.0 && data.split_ratio < 1.0, "data.split_ratio",
          "must lie in (0, 1)");
  require(data.rerank.n >= 1, "data.n", "must be positive");
  require(data.rerank.k >= 1 && data.rerank.k <= data.rerank.n, "data.k",
          "must lie in [1, n]");
  require(data.rerank.history >= 1, "data.history", "must be positive");
  require(data.validation_fraction > 0.0 && data.validation_fraction < 1.0,
          "data.validation_fraction", "must lie in (0, 1)");

  require(retriever.dim >= 1, "retriever.dim", "must be positive");
  require(retriever.lr > 0.0, "retriever.lr", "must be positive");
  require(retriever.weight_decay >= 0.0, "retriever.weight_decay", "must be >= 0");
  require(retriever.epochs >= 1, "retriever.epochs", "must be positive");
  require(retriever.batch_size >= 1, "retriever.batch_size", "must be positive");
  require(retriever.init_std > 0.0, "retriever.init_std", "must be positive");

  check("reranker", [&] { reranker.model.validate(); });
  require(reranker.model.max_len >= data.rerank.n, "reranker.max_len",
          "must be >= data.n");
  const auto& t = reranker.train;
  require(t.epochs >= 1, "reranker.epochs", "must be positive");
  require(t.batch_size >= 1, "reranker.batch_size", "must be positive");
  require(t.lr > 0.0, "reranker.lr", "must be positive");
  require(t.weight_decay >= 0.0, "reranker.weight_decay", "must be >= 0");
  require(t.clip > 0.0, "reranker.clip", "must be positive");

  dnr.validate(train_options());
  require(!output_dir.empty(), "output_dir", "must not be empty");
}

json to_json(const ExperimentConfig& c) {
  const auto& s = c.data.synthetic;
  json data = {
      {"source", c.data.source},
      {"csv_path", c.data.csv_path},
      {"synthetic",
       {{"users", s.users},
        {"items", s.items},
        {"latent_dim", s.latent_dim},
        {"factor_scale", s.factor_scale},
        {"history_events", s.history_events},
        {"exposure_events", s.exposure_events},
        {"exposure_temperature", s.exposure_temperature},
        {"noise_sigma", s.channel.sigma}}},
      {"min_interactions", c.data.min_interactions},
      {"split_ratio", c.data.split_ratio},
      {"n", c.data.rerank.n},
      {"k", c.data.rerank.k},
      {"history", c.data.rerank.history},
      {"validation_fraction", c.data.validation_fraction},
      {"seed", c.data.seed}};
  const auto& r = c.retriever;
  json retr = {{"dim", r.dim},
               {"lr", r.lr},
               {"weight_decay", r.weight_decay},
               {"negatives", r.negatives_per_positive},
               {"epochs", r.epochs},
               {"batch_size", r.batch_size},
               {"init_std", r.init_std}};
  json rr = reranker::to_json(c.reranker.model);
  const auto& t = c.reranker.train;
  rr["epochs"] = t.epochs;
  rr["batch_size"] = t.batch_size;
  rr["lr"] = t.lr;
  rr["weight_decay"] = t.weight_decay;
  rr["clip"] = t.clip;
  return {{"data", data},
          {"retriever", retr},
          {"reranker", rr},
          {"dnr", objectives::to_json(c.dnr)},
          {"output_dir", c.output_dir}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  {
    auto d = root.sub("data");
    d.get("source", c.data.source);
    d.get("csv_path", c.data.csv_path);
    {
      auto s = d.sub("synthetic");
      auto& sc = c.data.synthetic;
      s.get("users", sc.users);
      s.get("items", sc.items);
      s.get("latent_dim", sc.latent_dim);
      s.get("factor_scale", sc.factor_scale);
      s.get("history_events", sc.history_events);
      s.get("exposure_events", sc.exposure_events);
      s.get("exposure_temperature", sc.exposure_temperature);
      s.get("noise_sigma", sc.channel.sigma);
      s.finish();
    }
    d.get("min_interactions", c.data.min_interactions);
    d.get("split_ratio", c.data.split_ratio);
    d.get("n", c.data.rerank.n);
    d.get("k", c.data.rerank.k);
    d.get("history", c.data.rerank.history);
    d.get("validation_fraction", c.data.validation_fraction);
    d.get("seed", c.data.seed);
    d.finish();
  }
  {
    auto r = root.sub("retriever");
    r.get("dim", c.retriever.dim);
    r.get("lr", c.retriever.lr);
    r.get("weight_decay", c.retriever.weight_decay);
    r.get("negatives", c.retriever.negatives_per_positive);
    r.get("epochs", c.retriever.epochs);
    r.get("batch_size", c.retriever.batch_size);
    r.get("init_std", c.retriever.init_std);
    r.finish();
  }
  {
    auto r = root.sub("reranker");
    auto& m = c.reranker.model;
    std::string backbone = reranker::backbone_name(m.backbone);
    std::string integration = reranker::integration_name(m.integration);
    r.get("backbone", backbone);
    r.get("integration", integration);
    check("reranker.backbone", [&] { m.backbone = reranker::parse_backbone(backbone); });
    check("reranker.integration",
          [&] { m.integration = reranker::parse_integration(integration); });
    r.get("hidden", m.hidden);
    r.get("heads", m.heads);
    r.get("layers", m.layers);
    r.get("max_len", m.max_len);
    r.get("dropout", m.dropout);
    auto& t = c.reranker.train;
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("lr", t.lr);
    r.get("weight_decay", t.weight_decay);
    r.get("clip", t.clip);
    r.finish();
  }
  {
    auto d = root.sub("dnr");
    d.get("lambda_c", c.dnr.lambda_c);
    d.get("lambda_m", c.dnr.lambda_m);
    d.get("lambda_e", c.dnr.lambda_e);
    d.get("lr_phi", c.dnr.lr_phi);
    d.get("mmd_points", c.dnr.mmd.max_points);
    if (const auto* bw = d.raw("mmd_bandwidth")) {
      if (bw->is_string() && bw->get<std::string>() == "median")
        c.dnr.mmd.bandwidth.reset();
      else if (bw->is_number())
        c.dnr.mmd.bandwidth = bw->get<double>();
      else
        throw ConfigError("dnr.mmd_bandwidth: expected a number or \"median\"");
    }
    {
      auto n = d.sub("noise");
      std::string kind = noise::kind_name(c.dnr.noise.kind);
      n.get("kind", kind);
      check("dnr.noise.kind", [&] { c.dnr.noise.kind = noise::parse_kind(kind); });
      n.get("mu", c.dnr.noise.mu);
      n.get("sigma", c.dnr.noise.sigma);
      n.get("alpha", c.dnr.noise.alpha);
      n.get("beta", c.dnr.noise.beta);
      n.get("d_noise", c.dnr.noise.d_noise);
      n.finish();
    }
    d.finish();
  }
  root.get("output_dir", c.output_dir);
  root.finish();
  c.dnr.noise.lambda_c = c.dnr.lambda_c;
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("override path '" + path + "' is malformed");
    if (!node->is_object()) throw ConfigError("override path '" + path + "' is not a section");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides) {
  json doc = to_json(ExperimentConfig{});
  if (file) {
    std::ifstream in(*file);
    if (!in) throw MissingInputError("config file not found: " + file->string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(file->string() + ": " + e.what());
    }
    if (!user.is_object()) throw ConfigError(file->string() + ": not a JSON object");
    // Strict parse of the file alone first, so unknown keys are caught
    // with their own path before the defaults are merged in.
    config_from_json(user);
    doc.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = config_from_json(doc);
  cfg.validate();
  return cfg;
}

// ---- stages ------------------------------------------------------------

json to_json(const DatasetStats& s) {
  return {{"users", s.users}, {"items", s.items}, {"actions", s.actions},
          {"sequences", s.sequences}};
}

std::string format_stats(const DatasetStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%10s %10s %10s %10s\n%10zu %10zu %10zu %10zu\n",
                "#users", "#items", "#actions", "#sequences", s.users, s.items,
                s.actions, s.sequences);
  return buf;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  data::InteractionLog raw;
  if (cfg.data.source == "csv") {
    raw = data::load_csv(cfg.data.csv_path);
  } else {
    auto sc = cfg.data.synthetic;
    sc.seed = cfg.data.seed;
    auto [log, truth] = data::generate_synthetic(sc);
    raw = std::move(log);
    d.truth = std::move(truth);
  }
  const auto filtered = data::filter_min_interactions(raw, cfg.data.min_interactions);
  std::istringstream in(data::to_csv(filtered));
  d.log = data::parse_csv(in);
  d.stats.users = d.log.active_users();
  d.stats.items = d.log.active_items();
  d.stats.actions = d.log.events.size();
  d.stats.sequences = d.stats.users;
  return d;
}

RetrieverStage run_retriever(const ExperimentConfig& cfg,
                             const data::InteractionLog& log) {
  const auto pool = data::split_exposure(log, cfg.data.rerank.k).history;
  auto split = data::build_retriever_split(pool, cfg.data.split_ratio);
  RetrieverStage st;
  st.train = retriever::train_mf(split.train, cfg.retriever_options());
  st.train.warnings.insert(st.train.warnings.begin(), split.warnings.begin(),
                           split.warnings.end());
  if (!split.test.events.empty())
    st.auc = retriever::auc(st.train.model, split.test, log, cfg.data.seed);
  st.samples = data::build_rerank_dataset(log, st.train.model, cfg.data.rerank);
  return st;
}

std::vector<data::RerankSample> validation_samples(
    const ExperimentConfig& cfg, const std::vector<data::RerankSample>& samples) {
  return data::split_samples(samples, cfg.data.validation_fraction, cfg.data.seed)
      .validation;
}

objectives::BaselineResult run_baseline(const ExperimentConfig& cfg,
                                        const std::vector<data::RerankSample>& samples,
                                        const retriever::MfModel& retr) {
  const auto split =
      data::split_samples(samples, cfg.data.validation_fraction, cfg.data.seed);
  const objectives::TrainData td{split.train, split.validation, retr, retr.items()};
  return objectives::train_baseline(cfg.train_options(), cfg.reranker.model, td);
}

objectives::DnrResult run_dnr(const ExperimentConfig& cfg,
                              const std::vector<data::RerankSample>& samples,
                              const retriever::MfModel& retr) {
  const auto split =
      data::split_samples(samples, cfg.data.validation_fraction, cfg.data.seed);
  const objectives::TrainData td{split.train, split.validation, retr, retr.items()};
  auto rc = cfg.reranker.model;
  rc.integration = reranker::Integration::kDenoise;
  return objectives::train_dnr(cfg.train_options(), cfg.dnr, rc, td);
}

NoiseComparison compare_noise(const ExperimentConfig& cfg,
                              noise::GeneratorModel& gen,
                              const std::vector<data::RerankSample>& samples,
                              const retriever::MfModel& retr) {
  if (samples.empty()) throw DataError("no samples for noise diagnostics");
  Rng root(cfg.data.seed);
  Rng gen_rng = root.fork(11);
  Rng heur_rng = root.fork(12);
  const auto reference = objectives::true_noise(samples, cfg.dnr.lambda_c);
  const auto generated = objectives::generator_noise(gen, samples, retr, gen_rng);
  const auto& ns = cfg.dnr.noise;
  const auto gauss = noise::sample_gaussian(reference.size(), ns.mu, ns.sigma, heur_rng);
  const auto beta = noise::sample_beta(reference.size(), ns.alpha, ns.beta, heur_rng);
  return {metrics::noise_diagnostics(generated, reference),
          metrics::noise_diagnostics(gauss, reference),
          metrics::noise_diagnostics(beta, reference)};
}

// ---- sweeps ------------------------------------------------------------

std::string axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kLambdaC: return "lambda_c";
    case SweepAxis::kLambdaM: return "lambda_m";
    case SweepAxis::kLambdaE: return "lambda_e";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& s) {
  if (s == "lambda_c") return SweepAxis::kLambdaC;
  if (s == "lambda_m") return SweepAxis::kLambdaM;
  if (s == "lambda_e") return SweepAxis::kLambdaE;
  throw ConfigError("unknown sweep axis '" + s + "' (lambda_c, lambda_m, lambda_e)");
}

ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis axis,
                           double value, std::uint64_t seed) {
  auto c = base;
  c.data.seed = seed;
  switch (axis) {
    case SweepAxis::kLambdaC:
      c.dnr.lambda_c = value;
      c.dnr.noise.lambda_c = value;
      break;
    case SweepAxis::kLambdaM:
      c.dnr.lambda_m = value;
      break;
    case SweepAxis::kLambdaE:
      c.dnr.lambda_e = static_cast<std::size_t>(value);
      break;
  }
  return c;
}

std::string SweepResult::to_csv() const {
  std::string out = "axis,value,seed,hr,ndcg,map,f1,auc\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  axis_name(axis).c_str(), fmt_value(c.value).c_str(),
                  static_cast<unsigned long long>(c.seed), c.validation.hr_k,
                  c.validation.ndcg_k, c.validation.map_k, c.validation.f1_k,
                  c.validation.auc);
    out += buf;
  }
  return out;
}

std::vector<double> SweepResult::mean_ndcg() const {
  std::vector<double> values;
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const auto& c : cells) {
    auto it = std::find(values.begin(), values.end(), c.value);
    const auto k = static_cast<std::size_t>(it - values.begin());
    if (it == values.end()) {
      values.push_back(c.value);
      sums.push_back(0.0);
      counts.push_back(0);
    }
    sums[k] += c.validation.ndcg_k;
    ++counts[k];
  }
  for (std::size_t k = 0; k < sums.size(); ++k) sums[k] /= static_cast<double>(counts[k]);
  return sums;
}

std::string SweepResult::means_csv() const {
  std::string out = "axis,value,seeds,mean_ndcg\n";
  const auto means = mean_ndcg();
  std::vector<double> values;
  for (const auto& c : cells)
    if (std::find(values.begin(), values.end(), c.value) == values.end())
      values.push_back(c.value);
  char buf[256];
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto n = std::count_if(cells.begin(), cells.end(),
                                 [&](const SweepCell& c) { return c.value == values[k]; });
    std::snprintf(buf, sizeof buf, "%s,%s,%ld,%.10g\n", axis_name(axis).c_str(),
                  fmt_value(values[k]).c_str(), static_cast<long>(n), means[k]);
    out += buf;
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis,
                      const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds,
                      std::size_t threads) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  for (double v : values) {
    if (axis == SweepAxis::kLambdaE) {
      require(v >= 0.0 && v <= static_cast<double>(base.reranker.train.epochs) &&
                  v == std::floor(v),
              "sweep value " + fmt_value(v), "lambda_e must be an integer in [0, epochs]");
    } else {
      require(v >= 0.1 && v <= 1.0, "sweep value " + fmt_value(v),
              axis_name(axis) + " must lie in [0.1, 1.0]");
    }
  }
  SweepResult result;
  result.axis = axis;
  for (double v : values)
    for (auto s : seeds) {
      SweepCell cell;
      cell.value = v;
      cell.seed = s;
      result.cells.push_back(cell);
      with_axis(base, axis, v, s).validate();
    }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      const auto i = next.fetch_add(1);
      if (i >= result.cells.size()) return;
      auto& cell = result.cells[i];
      try {
        const auto cfg = with_axis(base, axis, cell.value, cell.seed);
        const auto ds = build_dataset(cfg);
        const auto rs = run_retriever(cfg, ds.log);
        auto r = run_dnr(cfg, rs.samples, rs.train.model);
        cell.validation = std::move(r.validation);
        cell.history = std::move(r.history);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = result.cells.size();
      }
    }
  };
  const auto n = std::max<std::size_t>(1, std::min(threads, result.cells.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return result;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("DNR_LAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError("DNR_LAB_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("missing prerequisite " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dnr::experiment
