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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dnr/error.hpp"
#include "dnr/experiment.hpp"

using namespace dnr;
using namespace dnr::experiment;
using nlohmann::json;

namespace {

// A world small enough for several full pipeline runs per test.
ExperimentConfig tiny() {
  ExperimentConfig c;
  c.data.synthetic.users = 40;
  c.data.synthetic.items = 150;
  c.data.synthetic.history_events = 40;
  c.data.min_interactions = 5;
  c.data.rerank.n = 30;
  c.reranker.model.max_len = 30;
  c.retriever.epochs = 5;
  c.reranker.train.epochs = 3;
  c.dnr.lambda_e = 1;
  return c;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

template <typename F>
std::string config_error(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("default config round-trips through JSON") {
  const ExperimentConfig c;
  const auto j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK_NOTHROW(c.validate());
  CHECK(j["reranker"]["batch_size"] == 16);
  CHECK(j["dnr"]["mmd_bandwidth"] == "median");
}

TEST_CASE("unknown keys and wrong types are rejected with their path") {
  CHECK(config_error([] { config_from_json({{"dnr", {{"lamda_c", 0.3}}}}); }) ==
        "unknown key dnr.lamda_c");
  CHECK(config_error([] { config_from_json({{"extra", 1}}); }) == "unknown key extra");
  CHECK(config_error([] {
          config_from_json({{"data", {{"synthetic", {{"users", "many"}}}}}});
        }).find("data.synthetic.users") == 0);
  CHECK(config_error([] {
          config_from_json({{"reranker", {{"backbone", "rnn"}}}});
        }).find("reranker.backbone") == 0);
  CHECK(config_error([] { config_from_json({{"dnr", 3}}); }).find("dnr") == 0);
}

TEST_CASE("validation names the offending field") {
  auto c = ExperimentConfig{};
  c.data.rerank.k = 60;
  c.data.synthetic.exposure_events = 60;
  CHECK(config_error([&] { c.validate(); }).find("data.k") == 0);
  c = ExperimentConfig{};
  c.reranker.model.max_len = 10;
  CHECK(config_error([&] { c.validate(); }).find("reranker.max_len") == 0);
  c = ExperimentConfig{};
  c.dnr.lambda_e = 31;
  CHECK(config_error([&] { c.validate(); }).find("dnr.lambda_e") == 0);
  c = ExperimentConfig{};
  c.data.source = "csv";
  CHECK(config_error([&] { c.validate(); }).find("data.csv_path") == 0);
  c.data.csv_path = "/nonexistent/log.csv";
  CHECK_THROWS_AS(c.validate(), MissingInputError);
}

TEST_CASE("dotted overrides") {
  json doc = to_json(ExperimentConfig{});
  apply_override(doc, "dnr.lambda_c=0.3");
  apply_override(doc, "reranker.backbone=attention");
  apply_override(doc, "dnr.mmd_bandwidth=0.2");
  apply_override(doc, "output_dir=runs/x");
  const auto c = config_from_json(doc);
  CHECK(c.dnr.lambda_c == 0.3);
  CHECK(c.dnr.noise.lambda_c == 0.3);
  CHECK(c.reranker.model.backbone == reranker::Backbone::kAttention);
  CHECK(*c.dnr.mmd.bandwidth == 0.2);
  CHECK(c.output_dir == "runs/x");
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "dnr.lambda_c.deep=1"), ConfigError);
  apply_override(doc, "dnr.typo=1");
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
}

TEST_CASE("config files merge over defaults") {
  const auto dir = std::filesystem::temp_directory_path() / "dnr_cfg_test";
  write_file(dir / "c.json", R"({"dnr": {"lambda_m": 0.6}, "output_dir": "o"})");
  const auto c = load_config(dir / "c.json", {"dnr.lambda_e=7"});
  CHECK(c.dnr.lambda_m == 0.6);
  CHECK(c.dnr.lambda_e == 7);
  CHECK(c.dnr.lambda_c == 0.4);
  CHECK(c.output_dir == "o");
  write_file(dir / "bad.json", R"({"dnr": {"noise": {"shape": 1}}})");
  CHECK(config_error([&] { load_config(dir / "bad.json", {}); }) ==
        "unknown key dnr.noise.shape");
  CHECK_THROWS_AS(load_config(dir / "missing.json", {}), MissingInputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset statistics match a recount of the written log") {
  const auto c = tiny();
  const auto ds = build_dataset(c);
  const auto rows = lines(data::to_csv(ds.log));
  CHECK(ds.stats.actions == rows.size() - 1);
  std::set<std::string> users, items;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::string u, it;
    std::getline(in, u, ',');
    std::getline(in, it, ',');
    users.insert(u);
    items.insert(it);
  }
  CHECK(ds.stats.users == users.size());
  CHECK(ds.stats.items == items.size());
  const auto rs = run_retriever(c, ds.log);
  CHECK(rs.samples.size() == ds.stats.sequences);
  CHECK(format_stats(ds.stats).find("#sequences") != std::string::npos);
}

TEST_CASE("the none integration ignores the retriever scores") {
  const auto c0 = tiny();
  const auto ds = build_dataset(c0);
  const auto rs = run_retriever(c0, ds.log);
  auto c = c0;
  c.reranker.model.integration = reranker::Integration::kNone;
  auto perturbed = rs.samples;
  for (auto& s : perturbed)
    for (std::size_t i = 0; i < s.size(); ++i)
      s.x[i] = 1.0 - static_cast<double>(i) / static_cast<double>(s.size());
  const auto a = run_baseline(c, rs.samples, rs.train.model);
  const auto b = run_baseline(c, perturbed, rs.train.model);
  CHECK(metrics::to_json(a.validation) == metrics::to_json(b.validation));
  auto cc = c0;
  const auto d = run_baseline(cc, perturbed, rs.train.model);
  const auto e = run_baseline(cc, rs.samples, rs.train.model);
  CHECK(metrics::to_json(d.validation) != metrics::to_json(e.validation));
}

TEST_CASE("per-sample CSV means reproduce the report") {
  const auto c = tiny();
  const auto ds = build_dataset(c);
  const auto rs = run_retriever(c, ds.log);
  const auto r = run_dnr(c, rs.samples, rs.train.model);
  const auto val = validation_samples(c, rs.samples);
  std::vector<std::size_t> users;
  for (const auto& s : val) users.push_back(s.user);
  const auto rows = lines(metrics::per_sample_csv(r.validation, users));
  REQUIRE(rows.size() == val.size() + 1);
  double hr = 0, ndcg = 0, map = 0, f1 = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::string f[6];
    for (auto& x : f) std::getline(in, x, ',');
    hr += std::stod(f[1]);
    ndcg += std::stod(f[2]);
    map += std::stod(f[3]);
    f1 += std::stod(f[4]);
  }
  const double n = static_cast<double>(val.size());
  CHECK(std::abs(hr / n - r.validation.hr_k) < 1e-12);
  CHECK(std::abs(ndcg / n - r.validation.ndcg_k) < 1e-12);
  CHECK(std::abs(map / n - r.validation.map_k) < 1e-12);
  CHECK(std::abs(f1 / n - r.validation.f1_k) < 1e-12);
}

TEST_CASE("a one-cell sweep equals a direct training run") {
  const auto c = tiny();
  const auto sweep = run_sweep(c, SweepAxis::kLambdaC, {0.3}, {4}, 1);
  REQUIRE(sweep.cells.size() == 1);
  const auto cc = with_axis(c, SweepAxis::kLambdaC, 0.3, 4);
  const auto ds = build_dataset(cc);
  const auto rs = run_retriever(cc, ds.log);
  const auto r = run_dnr(cc, rs.samples, rs.train.model);
  CHECK(metrics::to_json(sweep.cells[0].validation) == metrics::to_json(r.validation));
  CHECK(sweep.cells[0].history.to_csv() == r.history.to_csv());
}

TEST_CASE("sweep shape, threading and grid checks") {
  const auto c = tiny();
  const auto one = run_sweep(c, SweepAxis::kLambdaM, {0.2, 0.8}, {1, 2}, 1);
  const auto two = run_sweep(c, SweepAxis::kLambdaM, {0.2, 0.8}, {1, 2}, 3);
  CHECK(lines(one.to_csv()).size() == 1 + 2 * 2);
  CHECK(one.to_csv() == two.to_csv());
  CHECK(lines(one.means_csv()).size() == 3);
  CHECK(one.mean_ndcg().size() == 2);
  CHECK_THROWS_AS(run_sweep(c, SweepAxis::kLambdaC, {}, {1}, 1), ConfigError);
  CHECK_THROWS_AS(run_sweep(c, SweepAxis::kLambdaC, {0.05}, {1}, 1), ConfigError);
  CHECK_THROWS_AS(run_sweep(c, SweepAxis::kLambdaE, {4}, {1}, 1), ConfigError);
  CHECK_THROWS_AS(run_sweep(c, SweepAxis::kLambdaE, {1.5}, {1}, 1), ConfigError);
  CHECK(parse_axis("lambda_e") == SweepAxis::kLambdaE);
  CHECK_THROWS_AS(parse_axis("lambda_x"), ConfigError);
}

TEST_CASE("thread budget honours the environment") {
  setenv("DNR_LAB_THREADS", "3", 1);
  CHECK(thread_budget() == 3);
  setenv("DNR_LAB_THREADS", "zero", 1);
  CHECK_THROWS_AS(thread_budget(), ConfigError);
  unsetenv("DNR_LAB_THREADS");
  CHECK(thread_budget() >= 1);
}

TEST_CASE("file helpers") {
  const auto p = std::filesystem::temp_directory_path() / "dnr_io_test" / "a" / "b.txt";
  write_file(p, "hello\n");
  CHECK(read_file(p) == "hello\n");
  CHECK_FALSE(std::filesystem::exists(p.string() + ".tmp"));
  std::filesystem::remove_all(p.parent_path().parent_path());
  CHECK_THROWS_AS(read_file(p), MissingInputError);
}
