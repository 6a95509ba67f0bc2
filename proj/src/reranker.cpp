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

#include "dnr/reranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dnr/error.hpp"
#include "dnr/metrics.hpp"

namespace dnr::reranker {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem,
                                  const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

std::string layer_key(const char* kind, std::size_t layer, const char* leaf) {
  return std::string("rr.") + kind + std::to_string(layer) + "." + leaf;
}

}  // namespace

std::string backbone_name(Backbone b) {
  return b == Backbone::kMlp ? "mlp" : "attention";
}

Backbone parse_backbone(const std::string& s) {
  if (s == "mlp") return Backbone::kMlp;
  if (s == "attention") return Backbone::kAttention;
  throw ConfigError("unknown backbone '" + s + "'");
}

std::string integration_name(Integration i) {
  switch (i) {
    case Integration::kNone:
      return "none";
    case Integration::kConcat:
      return "concat";
    case Integration::kAdd:
      return "add";
    case Integration::kWeight:
      return "weight";
    case Integration::kDenoise:
      return "denoise";
  }
  return "?";
}

Integration parse_integration(const std::string& s) {
  if (s == "none") return Integration::kNone;
  if (s == "concat") return Integration::kConcat;
  if (s == "add") return Integration::kAdd;
  if (s == "weight") return Integration::kWeight;
  if (s == "denoise") return Integration::kDenoise;
  throw ConfigError("unknown integration '" + s + "'");
}

void RerankerConfig::validate() const {
  if (hidden == 0 || layers == 0 || max_len == 0)
    throw ConfigError("reranker hidden, layers and max_len must be positive");
  if (backbone == Backbone::kAttention && (heads == 0 || hidden % heads != 0))
    throw ConfigError("attention hidden width must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("dropout must lie in [0, 1)");
}

nlohmann::json to_json(const RerankerConfig& c) {
  return {{"backbone", backbone_name(c.backbone)},
          {"integration", integration_name(c.integration)},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"layers", c.layers},
          {"max_len", c.max_len},
          {"dropout", c.dropout}};
}

RerankerConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("reranker config must be an object");
  RerankerConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "backbone")
        c.backbone = parse_backbone(value.get<std::string>());
      else if (key == "integration")
        c.integration = parse_integration(value.get<std::string>());
      else if (key == "hidden")
        c.hidden = value.get<std::size_t>();
      else if (key == "heads")
        c.heads = value.get<std::size_t>();
      else if (key == "layers")
        c.layers = value.get<std::size_t>();
      else if (key == "max_len")
        c.max_len = value.get<std::size_t>();
      else if (key == "dropout")
        c.dropout = value.get<double>();
      else
        throw ConfigError("unknown key 'reranker." + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad reranker config: ") + e.what());
  }
  c.validate();
  return c;
}

RerankerModel::RerankerModel(const RerankerConfig& config,
                             std::size_t num_items, Rng& rng)
    : config_(config), num_items_(num_items) {
  config_.validate();
  if (num_items == 0) throw ConfigError("reranker needs a positive item count");
  const std::size_t h = config_.hidden;
  params_.add_normal("rr.item_emb", num_items, h, 0.1, rng);
  params_.add_xavier("rr.user_w", h, h, rng);
  params_.add_zeros("rr.user_b", 1, h);
  std::size_t feat = h;
  if (config_.integration == Integration::kConcat ||
      config_.integration == Integration::kDenoise)
    feat = h + 1;
  if (config_.integration == Integration::kAdd)
    params_.add_normal("rr.score_w", 1, h, 0.1, rng);
  params_.add_xavier("rr.in_w", feat + h, h, rng);
  params_.add_zeros("rr.in_b", 1, h);
  if (config_.backbone == Backbone::kMlp) {
    for (std::size_t l = 0; l < config_.layers; ++l) {
      params_.add_xavier(layer_key("mlp", l, "w"), h, h, rng);
      params_.add_zeros(layer_key("mlp", l, "b"), 1, h);
    }
  } else {
    params_.add_normal("rr.pos", config_.max_len, h, 0.1, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      for (const char* w : {"wq", "wk", "wv", "wo"})
        params_.add_xavier(layer_key("att", l, w), h, h, rng);
      params_.add_xavier(layer_key("att", l, "f1w"), h, h, rng);
      params_.add_zeros(layer_key("att", l, "f1b"), 1, h);
      params_.add_xavier(layer_key("att", l, "f2w"), h, h, rng);
      params_.add_zeros(layer_key("att", l, "f2b"), 1, h);
    }
  }
  params_.add_xavier("rr.out_w", h, 1, rng);
  params_.add_zeros("rr.out_b", 1, 1);
}

ad::Var RerankerModel::encode_user(ad::Graph& g,
                                   std::span<const std::size_t> history) {
  const std::size_t h = config_.hidden;
  if (history.empty()) return g.constant(ad::Array2(1, h));
  for (const auto i : history)
    if (i >= num_items_)
      throw DataError("history item " + std::to_string(i) + " out of range");
  // Sorted ids make the pooled sum, and so the state, bitwise independent
  // of history order.
  std::vector<std::size_t> ids(history.begin(), history.end());
  std::sort(ids.begin(), ids.end());
  auto emb = ad::gather_rows(g.param(params_, "rr.item_emb"), ids);
  const ad::Array2 pool(1, history.size(),
                        1.0 / static_cast<double>(history.size()));
  auto mean = ad::matmul(g.constant(pool), emb);
  return ad::add(ad::matmul(mean, g.param(params_, "rr.user_w")),
                 g.param(params_, "rr.user_b"));
}

ad::Var RerankerModel::dropout(ad::Graph& g, ad::Var h, Rng* rng) const {
  if (rng == nullptr || config_.dropout == 0.0) return h;
  const double keep = 1.0 - config_.dropout;
  ad::Array2 mask(h.rows(), h.cols());
  for (std::size_t k = 0; k < mask.size(); ++k)
    mask[k] = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return ad::mul(h, g.constant(std::move(mask)));
}

ad::Var RerankerModel::item_features(ad::Graph& g,
                                     const data::RerankSample& sample,
                                     ad::Var scores, Rng* dropout_rng) {
  const std::size_t n = sample.size();
  if (n == 0) throw DataError("empty candidate list");
  if (scores.rows() != n || scores.cols() != 1)
    throw ShapeError("score input " + scores.value().shape_string() +
                     " does not match " + std::to_string(n) + " candidates");
  for (const auto i : sample.candidates)
    if (i >= num_items_)
      throw DataError("candidate item " + std::to_string(i) + " out of range");
  auto e = ad::gather_rows(g.param(params_, "rr.item_emb"), sample.candidates);
  ad::Var f;
  switch (config_.integration) {
    case Integration::kNone:
      f = e;
      break;
    case Integration::kConcat:
    case Integration::kDenoise:
      f = ad::concat_cols({e, scores});
      break;
    case Integration::kAdd:
      f = ad::add(e, ad::matmul(scores, g.param(params_, "rr.score_w")));
      break;
    case Integration::kWeight:
      f = ad::mul(e, scores);
      break;
  }
  auto state = ad::repeat_rows(encode_user(g, sample.history), n);
  auto h0 = ad::relu(ad::add(
      ad::matmul(ad::concat_cols({f, state}), g.param(params_, "rr.in_w")),
      g.param(params_, "rr.in_b")));
  if (config_.backbone == Backbone::kAttention) {
    if (n > config_.max_len)
      throw DataError("list of " + std::to_string(n) +
                      " exceeds the position table (" +
                      std::to_string(config_.max_len) + ")");
    h0 = ad::add(h0, ad::slice_rows(g.param(params_, "rr.pos"), 0, n));
  }
  return dropout(g, h0, dropout_rng);
}

ad::Var RerankerModel::attention_block(ad::Graph& g, ad::Var h,
                                       std::size_t layer) {
  const std::size_t hd = config_.hidden / config_.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  auto q = ad::matmul(h, g.param(params_, layer_key("att", layer, "wq")));
  auto k = ad::matmul(h, g.param(params_, layer_key("att", layer, "wk")));
  auto v = ad::matmul(h, g.param(params_, layer_key("att", layer, "wv")));
  std::vector<ad::Var> heads;
  for (std::size_t a = 0; a < config_.heads; ++a) {
    auto qa = ad::slice_cols(q, a * hd, hd);
    auto ka = ad::slice_cols(k, a * hd, hd);
    auto va = ad::slice_cols(v, a * hd, hd);
    auto att =
        ad::softmax_rows(ad::scale(ad::matmul(qa, ad::transpose(ka)), inv));
    heads.push_back(ad::matmul(att, va));
  }
  auto o = ad::matmul(ad::concat_cols(heads),
                      g.param(params_, layer_key("att", layer, "wo")));
  h = ad::add(h, o);
  auto ff = ad::relu(
      ad::add(ad::matmul(h, g.param(params_, layer_key("att", layer, "f1w"))),
              g.param(params_, layer_key("att", layer, "f1b"))));
  ff = ad::add(ad::matmul(ff, g.param(params_, layer_key("att", layer, "f2w"))),
               g.param(params_, layer_key("att", layer, "f2b")));
  return ad::add(h, ff);
}

ad::Var RerankerModel::backbone(ad::Graph& g, ad::Var h, Rng* dropout_rng) {
  for (std::size_t l = 0; l < config_.layers; ++l) {
    if (config_.backbone == Backbone::kMlp)
      h = ad::relu(ad::add(ad::matmul(h, g.param(params_, layer_key("mlp", l, "w"))),
                           g.param(params_, layer_key("mlp", l, "b"))));
    else
      h = attention_block(g, h, l);
    h = dropout(g, h, dropout_rng);
  }
  return h;
}

ad::Var RerankerModel::score_list(ad::Graph& g,
                                  const data::RerankSample& sample,
                                  ad::Var scores_in) {
  auto h = backbone(g, item_features(g, sample, scores_in, nullptr), nullptr);
  return ad::sigmoid(ad::add(ad::matmul(h, g.param(params_, "rr.out_w")),
                             g.param(params_, "rr.out_b")));
}

ad::Var RerankerModel::score_batch(ad::Graph& g,
                                   std::span<const data::RerankSample> samples,
                                   ad::Var scores_in, Rng* dropout_rng) {
  if (samples.empty()) throw DataError("empty batch");
  std::size_t rows = 0;
  for (const auto& s : samples) rows += s.size();
  if (scores_in.rows() != rows || scores_in.cols() != 1)
    throw ShapeError("batch score input " + scores_in.value().shape_string() +
                     " does not match " + std::to_string(rows) + " candidates");
  std::vector<ad::Var> parts;
  parts.reserve(samples.size());
  std::size_t at = 0;
  for (const auto& s : samples) {
    auto slice = ad::slice_rows(scores_in, at, s.size());
    at += s.size();
    // The mlp scores items independently, so its backbone runs once over
    // the stacked features.
    auto f = item_features(g, s, slice, dropout_rng);
    parts.push_back(config_.backbone == Backbone::kMlp
                        ? f
                        : backbone(g, f, dropout_rng));
  }
  auto h = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
  if (config_.backbone == Backbone::kMlp) h = backbone(g, h, dropout_rng);
  return ad::sigmoid(ad::add(ad::matmul(h, g.param(params_, "rr.out_w")),
                             g.param(params_, "rr.out_b")));
}

std::vector<double> RerankerModel::predict(const data::RerankSample& sample,
                                           std::span<const double> scores_in) {
  ad::Graph g;
  ad::Array2 s(scores_in.size(), 1);
  for (std::size_t i = 0; i < scores_in.size(); ++i) s(i, 0) = scores_in[i];
  const auto out = score_list(g, sample, g.constant(std::move(s)));
  std::vector<double> z(out.rows());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = out.value()(i, 0);
  return z;
}

void RerankerModel::save(const std::filesystem::path& stem) const {
  ad::save(params_, with_suffix(stem, ".dnrw"));
  std::ofstream f(with_suffix(stem, ".json"));
  if (!f) throw DataError("cannot write " + stem.string() + ".json");
  nlohmann::json j = {{"config", to_json(config_)}, {"num_items", num_items_}};
  f << j.dump(2) << '\n';
}

RerankerModel RerankerModel::load(const std::filesystem::path& stem) {
  const auto meta = with_suffix(stem, ".json");
  std::ifstream f(meta);
  if (!f) throw MissingInputError("cannot open " + meta.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta.string() + ": " + e.what());
  }
  RerankerModel m;
  m.config_ = config_from_json(j.at("config"));
  m.num_items_ = j.at("num_items").get<std::size_t>();
  m.params_ = ad::load(with_suffix(stem, ".dnrw"));
  return m;
}

std::vector<std::size_t> rank_top_k(std::span<const double> z_hat,
                                    std::size_t k) {
  return metrics::top_k_indices(z_hat, k);
}

ad::Array2 stacked_scores(std::span<const data::RerankSample> samples) {
  std::size_t rows = 0;
  for (const auto& s : samples) rows += s.size();
  ad::Array2 out(rows, 1);
  std::size_t at = 0;
  for (const auto& s : samples)
    for (double v : s.x) out(at++, 0) = v;
  return out;
}

ad::Array2 stacked_labels(std::span<const data::RerankSample> samples) {
  std::size_t rows = 0;
  for (const auto& s : samples) rows += s.size();
  ad::Array2 out(rows, 1);
  std::size_t at = 0;
  for (const auto& s : samples)
    for (int v : s.z) out(at++, 0) = v;
  return out;
}

}  // namespace dnr::reranker
