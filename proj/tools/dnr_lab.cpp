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

// dnr_lab: command-line driver for the experiment pipeline.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 missing prerequisite, 4 numerical failure, 5 theory check failed.

#include <cstdio>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dnr/error.hpp"
#include "dnr/experiment.hpp"
#include "dnr/oracle.hpp"
#include "dnr/param_store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dnr;
using namespace dnr::experiment;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitTheory = 5;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "JSON experiment config");
  sub->allow_extras();
  sub->footer("Any config key can be overridden as --section.key=value.");
}

std::vector<std::string> collect_overrides(const CLI::App* sub) {
  std::vector<std::string> out;
  const auto extras = sub->remaining();
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2)
      throw ConfigError("unrecognised argument '" + a + "'");
    if (a.find('=') != std::string::npos) {
      out.push_back(a.substr(2));
    } else if (i + 1 < extras.size()) {
      out.push_back(a.substr(2) + "=" + extras[++i]);
    } else {
      throw ConfigError("override '" + a + "' has no value");
    }
  }
  return out;
}

ExperimentConfig resolve(const Common& c, const CLI::App* sub) {
  std::optional<fs::path> file;
  if (!c.config.empty()) file = c.config;
  return load_config(file, collect_overrides(sub));
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void require_file(const fs::path& p) {
  if (!fs::exists(p))
    throw MissingInputError("missing prerequisite " + p.string() +
                            " (run the earlier pipeline step first)");
}

std::vector<std::size_t> users_of(const std::vector<data::RerankSample>& s) {
  std::vector<std::size_t> u;
  for (const auto& x : s) u.push_back(x.user);
  return u;
}

std::vector<data::RerankSample> load_samples(const fs::path& p) {
  require_file(p);
  return data::load_jsonl(p);
}

retriever::MfModel load_retriever(const Layout& L) {
  require_file(L.retriever_model());
  return retriever::MfModel::load(L.retriever_model());
}

void print_metrics(const std::string& label, const metrics::MetricsReport& r) {
  std::printf("%-12s HR@%zu %.4f  NDCG@%zu %.4f  MAP@%zu %.4f  F1@%zu %.4f  AUC %.4f\n",
              label.c_str(), r.k, r.hr_k, r.k, r.ndcg_k, r.k, r.map_k, r.k, r.f1_k,
              r.auc);
}

// ---- subcommands -------------------------------------------------------

int cmd_gen_data(const ExperimentConfig& cfg) {
  const Layout L{cfg.output_dir};
  const auto ds = build_dataset(cfg);
  write_file(L.interactions(), data::to_csv(ds.log));
  if (ds.truth) write_file(L.truth(), dump(data::truth_to_json(*ds.truth)));
  write_file(L.stats(), dump(to_json(ds.stats)));
  std::cout << format_stats(ds.stats);
  return 0;
}

data::InteractionLog load_log(const Layout& L) {
  require_file(L.interactions());
  return data::load_csv(L.interactions());
}

int cmd_train_retriever(const ExperimentConfig& cfg) {
  const Layout L{cfg.output_dir};
  const auto log = load_log(L);
  const auto st = run_retriever(cfg, log);
  fs::create_directories(L.retriever_dir());
  st.train.model.save(L.retriever_model());
  std::string hist = "epoch,loss\n";
  for (std::size_t e = 0; e < st.train.epoch_loss.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.10g\n", e + 1, st.train.epoch_loss[e]);
    hist += buf;
  }
  write_file(L.retriever_dir() / "history.csv", hist);
  data::save_jsonl(st.samples, L.samples());
  std::size_t flagged = 0;
  for (const auto& s : st.samples) flagged += s.flagged();
  json summary = {{"config", to_json(cfg)},
                  {"auc", st.auc.auc},
                  {"auc_positives", st.auc.positives},
                  {"auc_negatives", st.auc.negatives},
                  {"samples", st.samples.size()},
                  {"samples_without_positive", flagged},
                  {"fingerprint", ad::hex64(ad::fingerprint(st.train.model.params()))},
                  {"warnings", st.train.warnings}};
  write_file(L.retriever_dir() / "summary.json", dump(summary));
  for (const auto& w : st.train.warnings) std::cerr << "warning: " << w << "\n";
  std::printf("retriever AUC %.4f over %zu positives; %zu rerank samples (%zu without a positive)\n",
              st.auc.auc, st.auc.positives, st.samples.size(), flagged);
  return 0;
}

void write_run(const fs::path& dir, const ExperimentConfig& cfg,
               const objectives::TrainHistory& history,
               const metrics::MetricsReport& validation,
               const std::vector<data::RerankSample>& val, json extra) {
  write_file(dir / "history.csv", history.to_csv());
  write_file(dir / "per_sample.csv", metrics::per_sample_csv(validation, users_of(val)));
  json summary = {{"config", to_json(cfg)}, {"validation", metrics::to_json(validation)}};
  for (auto& [k, v] : extra.items()) summary[k] = v;
  write_file(dir / "summary.json", dump(summary));
}

int cmd_train_baseline(const ExperimentConfig& cfg) {
  const Layout L{cfg.output_dir};
  const auto samples = load_samples(L.samples());
  const auto retr = load_retriever(L);
  const auto r = run_baseline(cfg, samples, retr);
  const auto dir = L.baseline_dir(cfg.reranker.model.integration);
  fs::create_directories(dir);
  r.model.save(dir / "reranker");
  write_run(dir, cfg, r.history, r.validation, validation_samples(cfg, samples),
            {{"reranker_fingerprint", ad::hex64(ad::fingerprint(r.model.params()))}});
  print_metrics(reranker::integration_name(cfg.reranker.model.integration), r.validation);
  return 0;
}

int cmd_train_dnr(const ExperimentConfig& cfg) {
  const Layout L{cfg.output_dir};
  const auto samples = load_samples(L.samples());
  const auto retr = load_retriever(L);
  const auto r = run_dnr(cfg, samples, retr);
  const auto dir = L.dnr_dir();
  fs::create_directories(dir);
  r.model.save(dir / "reranker");
  ad::save(r.generator.params(), dir / "generator.dnrw");
  const json gen = {{"emb_dim", r.generator.emb_dim()},
                    {"d_noise", r.generator.d_noise()},
                    {"init_fingerprint", ad::hex64(r.generator_init_fingerprint)},
                    {"fingerprint", ad::hex64(ad::fingerprint(r.generator.params()))}};
  write_file(dir / "generator.json", dump(gen));
  write_run(dir, cfg, r.history, r.validation, validation_samples(cfg, samples),
            {{"reranker_fingerprint", ad::hex64(ad::fingerprint(r.model.params()))},
             {"generator", gen}});
  print_metrics("dnr", r.validation);
  return 0;
}

struct EvalArgs {
  std::string model;
  bool identity = false;
  std::string samples;
  std::string subset = "validation";
  std::size_t k = 0;
  std::string name;
};

int cmd_eval(const ExperimentConfig& cfg, const EvalArgs& a) {
  const Layout L{cfg.output_dir};
  if (a.identity == !a.model.empty())
    throw ConfigError("eval needs exactly one of --model or --identity");
  if (a.subset != "validation" && a.subset != "all")
    throw ConfigError("--subset must be 'validation' or 'all'");
  auto samples = load_samples(a.samples.empty() ? L.samples() : fs::path(a.samples));
  if (a.subset == "validation") samples = validation_samples(cfg, samples);
  if (samples.empty()) throw DataError("no samples to evaluate");
  const std::size_t k = a.k == 0 ? cfg.data.rerank.k : a.k;
  for (const auto& s : samples)
    if (k > s.size())
      throw ConfigError("K = " + std::to_string(k) + " exceeds the list length " +
                        std::to_string(s.size()));
  metrics::MetricsReport report;
  std::string name = a.name;
  if (a.identity) {
    report = objectives::evaluate_identity(samples, k);
    if (name.empty()) name = "identity";
  } else {
    require_file(fs::path(a.model + ".json"));
    auto model = reranker::RerankerModel::load(a.model);
    for (const auto& s : samples) {
      for (auto c : s.candidates)
        if (c >= model.num_items())
          throw ShapeError("checkpoint covers " + std::to_string(model.num_items()) +
                           " items but the dataset uses item " + std::to_string(c));
      if (model.config().backbone == reranker::Backbone::kAttention &&
          s.size() > model.config().max_len)
        throw ShapeError("list length exceeds the checkpoint's max_len");
    }
    report = objectives::evaluate(model, samples, k);
    if (name.empty()) name = fs::path(a.model).parent_path().filename().string();
    if (name.empty()) name = "model";
  }
  const auto dir = cfg.output_dir / fs::path("eval-" + name);
  write_file(dir / "report.json", dump(metrics::to_json(report)));
  write_file(dir / "per_sample.csv", metrics::per_sample_csv(report, users_of(samples)));
  print_metrics(name, report);
  return 0;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(std::stod(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis_text,
              const std::string& values_text, const std::string& seeds_text) {
  const auto axis = parse_axis(axis_text);
  const auto values = parse_list<double>(values_text, "--values");
  const auto seeds = parse_list<std::uint64_t>(seeds_text, "--seeds");
  const auto result = run_sweep(cfg, axis, values, seeds, thread_budget());
  const auto dir = cfg.output_dir / fs::path("sweep-" + axis_name(axis));
  for (const auto& c : result.cells) {
    char cell[96];
    std::snprintf(cell, sizeof cell, "%s=%g-seed%llu", axis_name(axis).c_str(),
                  c.value, static_cast<unsigned long long>(c.seed));
    const auto cdir = dir / "cells" / cell;
    write_file(cdir / "history.csv", c.history.to_csv());
    write_file(cdir / "summary.json",
               dump({{"config", to_json(with_axis(cfg, axis, c.value, c.seed))},
                     {"validation", metrics::to_json(c.validation)}}));
  }
  write_file(dir / "sweep.csv", result.to_csv());
  write_file(dir / "means.csv", result.means_csv());
  std::cout << result.means_csv();
  return 0;
}

int cmd_verify_theory(const ExperimentConfig& cfg, std::size_t worlds,
                      std::uint64_t seed, bool inject) {
  oracle::VerifyOptions o;
  o.worlds = worlds;
  o.seed = seed;
  o.inject_unnormalized_q = inject;
  const auto r = oracle::verify_theory(o);
  const auto text = oracle::format_report(r);
  const json j = {{"worlds", r.worlds.size()},
                  {"failures", r.failures},
                  {"max_residual_direct", r.max_residual_direct},
                  {"max_residual_augmented", r.max_residual_augmented},
                  {"max_delta_x", r.max_delta_x},
                  {"max_bayes_delta_x", r.max_bayes_delta_x},
                  {"passed", r.passed()}};
  const auto dir = cfg.output_dir / fs::path("theory");
  write_file(dir / "report.txt", text);
  write_file(dir / "report.json", dump(j));
  std::cout << text;
  return r.passed() ? 0 : kExitTheory;
}

int cmd_noise_diag(const ExperimentConfig& cfg, const std::string& subset) {
  const Layout L{cfg.output_dir};
  if (subset != "validation" && subset != "all")
    throw ConfigError("--subset must be 'validation' or 'all'");
  auto samples = load_samples(L.samples());
  if (subset == "validation") samples = validation_samples(cfg, samples);
  const auto retr = load_retriever(L);
  require_file(L.dnr_dir() / "generator.json");
  require_file(L.dnr_dir() / "generator.dnrw");
  const auto meta = json::parse(read_file(L.dnr_dir() / "generator.json"));
  Rng scratch(0);
  noise::GeneratorModel gen(meta.at("emb_dim").get<std::size_t>(),
                            meta.at("d_noise").get<std::size_t>(), scratch);
  auto loaded = ad::load(L.dnr_dir() / "generator.dnrw");
  for (const auto& [name, e] : gen.params().entries())
    if (!loaded.contains(name) || !loaded.value(name).same_shape(e.value))
      throw ShapeError("generator checkpoint does not match entry " + name);
  gen.params() = std::move(loaded);
  if (gen.emb_dim() != retr.dim())
    throw ShapeError("generator and retriever embedding widths differ");

  const auto cmp = compare_noise(cfg, gen, samples, retr);
  const auto dir = cfg.output_dir / fs::path("noise-diag");
  auto entry = [](const metrics::NoiseDiagnostics& d) {
    return json{{"kl", d.kl}, {"mmd2", d.mmd2}, {"bandwidth", d.bandwidth}};
  };
  const json j = {{"lambda_c", cfg.dnr.lambda_c},
                  {"cells", cmp.generator.reference.counts.empty()
                                ? 0
                                : std::accumulate(cmp.generator.reference.counts.begin(),
                                                  cmp.generator.reference.counts.end(),
                                                  std::size_t{0})},
                  {"generator", entry(cmp.generator)},
                  {"gaussian", entry(cmp.gaussian)},
                  {"beta", entry(cmp.beta)}};
  write_file(dir / "summary.json", dump(j));
  write_file(dir / "hist-generator.csv", metrics::histogram_csv(cmp.generator));
  write_file(dir / "hist-gaussian.csv", metrics::histogram_csv(cmp.gaussian));
  write_file(dir / "hist-beta.csv", metrics::histogram_csv(cmp.beta));
  std::printf("KL(true || generated): generator %.4f  gaussian %.4f  beta %.4f\n",
              cmp.generator.kl, cmp.gaussian.kl, cmp.beta.kl);
  std::printf("MMD^2:                 generator %.5f  gaussian %.5f  beta %.5f\n",
              cmp.generator.mmd2, cmp.gaussian.mmd2, cmp.beta.mmd2);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale laboratory for denoising rerankers"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen-data", "Generate or load the interaction log");
  auto* retr = app.add_subcommand("train-retriever", "Train MF and build rerank samples");
  auto* base = app.add_subcommand("train-baseline", "Train a reranker on L_direct");
  auto* dnrc = app.add_subcommand("train-dnr", "Train the denoising reranker");
  auto* eval = app.add_subcommand("eval", "Evaluate a reranker checkpoint");
  auto* sweep = app.add_subcommand("sweep", "Sweep one DNR hyperparameter over seeds");
  auto* theory = app.add_subcommand("verify-theory", "Check the likelihood decompositions");
  auto* diag = app.add_subcommand("noise-diag", "Compare generated and true noise");
  for (auto* s : {gen, retr, base, dnrc, eval, sweep, theory, diag}) add_common(s, common);

  EvalArgs ea;
  eval->add_option("--model", ea.model, "Checkpoint stem (without .dnrw/.json)");
  eval->add_flag("--identity", ea.identity, "Rank by the retriever scores");
  eval->add_option("--samples", ea.samples, "Rerank samples JSON-lines");
  eval->add_option("--subset", ea.subset, "validation or all");
  eval->add_option("-k,--k", ea.k, "Cut-off (default data.k)");
  eval->add_option("--name", ea.name, "Output directory suffix");

  std::string axis, values, seeds = "1,2,3,4,5";
  sweep->add_option("--axis", axis, "lambda_c, lambda_m or lambda_e")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "Comma-separated seeds");

  std::size_t worlds = 100;
  std::uint64_t theory_seed = 0;
  bool inject = false;
  theory->add_option("--worlds", worlds, "Number of random worlds");
  theory->add_option("--seed", theory_seed, "World seed");
  theory->add_flag("--inject-unnormalized-q", inject, "Negative control");

  std::string diag_subset = "validation";
  diag->add_option("--subset", diag_subset, "validation or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const auto cfg = resolve(common, sub);
    if (sub == gen) return cmd_gen_data(cfg);
    if (sub == retr) return cmd_train_retriever(cfg);
    if (sub == base) return cmd_train_baseline(cfg);
    if (sub == dnrc) return cmd_train_dnr(cfg);
    if (sub == eval) return cmd_eval(cfg, ea);
    if (sub == sweep) return cmd_sweep(cfg, axis, values, seeds);
    if (sub == theory) return cmd_verify_theory(cfg, worlds, theory_seed, inject);
    if (sub == diag) return cmd_noise_diag(cfg, diag_subset);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kExitMissing;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "incompatible inputs: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
