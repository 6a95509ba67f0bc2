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

#include "dnr/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dnr/error.hpp"
#include "dnr/param_store.hpp"

namespace dnr::objectives {
namespace {

std::size_t cell_count(Batch batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.size();
  return n;
}

ad::Var bce_on(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
               ad::Var scores, Rng* dropout_rng) {
  if (batch.empty()) throw DataError("empty batch");
  const auto labels = reranker::stacked_labels(batch);
  const ad::Array2 mask(labels.rows(), 1, 1.0);
  return ad::bce_loss(model.score_batch(g, batch, scores, dropout_rng), labels,
                      mask);
}

// Evenly strided row subset of at most `limit` rows.
std::vector<std::size_t> strided_rows(std::size_t rows, std::size_t limit) {
  const std::size_t stride = rows > limit ? (rows + limit - 1) / limit : 1;
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows; r += stride) out.push_back(r);
  return out;
}

ad::Var rbf_mean(ad::Var a, ad::Var b, double bandwidth) {
  return ad::mean(ad::exp(
      ad::scale(ad::pairwise_sqdist(a, b), -1.0 / (2.0 * bandwidth * bandwidth))));
}

void require_finite(double v, std::size_t epoch, std::size_t batch,
                    const char* what) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " is not finite at epoch " +
                       std::to_string(epoch) + ", batch " +
                       std::to_string(batch));
}

struct Accumulator {
  double l_direct = 0.0, l_z = 0.0, l_theta = 0.0, l_adv = 0.0, l_x = 0.0;
  std::size_t batches = 0, phi_batches = 0;
};

class Trainer {
 public:
  Trainer(const TrainOptions& opts, const reranker::RerankerConfig& rcfg,
          const TrainData& data)
      : opts_(opts),
        data_(data),
        root_(opts.seed),
        init_rng_(root_.fork(1)),
        order_rng_(root_.fork(2)),
        noise_rng_(root_.fork(3)),
        phi_rng_(root_.fork(4)),
        dropout_rng_(root_.fork(5)),
        model_(rcfg, data.num_items, init_rng_) {
    if (data.train.empty()) throw DataError("no training samples");
    if (opts.epochs == 0 || opts.batch_size == 0)
      throw ConfigError("epochs and batch_size must be positive");
    if (!(opts.lr > 0.0)) throw ConfigError("learning rate must be positive");
    adam_.lr = opts.lr;
    adam_.weight_decay = opts.weight_decay;
  }

  reranker::RerankerModel& model() { return model_; }
  Rng& noise_rng() { return noise_rng_; }
  Rng& phi_rng() { return phi_rng_; }
  Rng* dropout_rng() { return &dropout_rng_; }
  const TrainOptions& opts() const { return opts_; }
  const TrainData& data() const { return data_; }

  std::vector<std::vector<std::size_t>> epoch_batches() {
    std::vector<std::size_t> order(data_.train.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, order_rng_);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < order.size(); b += opts_.batch_size)
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                           order.size(), b + opts_.batch_size)));
    return out;
  }

  std::vector<data::RerankSample> gather(const std::vector<std::size_t>& idx) {
    std::vector<data::RerankSample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data_.train[i]);
    return out;
  }

  void step_theta(ad::Var loss, ad::Graph& g) {
    g.backward(loss);
    model_.params().clip_grad_norm(opts_.clip);
    ad::adam_step(model_.params(), adam_);
  }

  double validation_ndcg() {
    if (data_.validation.empty()) return 0.0;
    return evaluate(model_, data_.validation, opts_.k).ndcg_k;
  }

 private:
  TrainOptions opts_;
  const TrainData& data_;
  Rng root_;
  Rng init_rng_;
  Rng order_rng_;
  Rng noise_rng_;
  Rng phi_rng_;
  Rng dropout_rng_;
  reranker::RerankerModel model_;
  ad::AdamOptions adam_;
};

EpochRecord close_epoch(std::size_t epoch, Phase phase, const Accumulator& a,
                        double val_ndcg) {
  const double nb = static_cast<double>(std::max<std::size_t>(a.batches, 1));
  const double np = static_cast<double>(std::max<std::size_t>(a.phi_batches, 1));
  return {epoch,        phase,         a.l_direct / nb, a.l_z / nb,
          a.l_theta / nb, a.l_adv / np, a.l_x / np,    val_ndcg};
}

ad::Array2 column_of(const std::vector<double>& v) {
  ad::Array2 out(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) out(i, 0) = v[i];
  return out;
}

}  // namespace

std::string phase_name(Phase p) {
  return p == Phase::kWarmup ? "warmup" : "adversarial";
}

ad::Var loss_direct(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
                    Rng* dropout_rng) {
  return bce_on(g, model, batch, g.constant(reranker::stacked_scores(batch)),
                dropout_rng);
}

ad::Var loss_z(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
               const ad::Array2& x_prime, Rng* dropout_rng) {
  if (x_prime.rows() != cell_count(batch) || x_prime.cols() != 1)
    throw ShapeError("x' " + x_prime.shape_string() + " does not match " +
                     std::to_string(cell_count(batch)) + " cells");
  return bce_on(g, model, batch, g.constant(x_prime), dropout_rng);
}

ad::Var loss_theta(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
                   const ad::Array2& x_prime, double lambda_m,
                   Rng* dropout_rng) {
  if (!(lambda_m >= 0.0)) throw ConfigError("lambda_m must be non-negative");
  auto direct = loss_direct(g, model, batch, dropout_rng);
  if (lambda_m == 0.0) return direct;
  return ad::add(direct, ad::scale(loss_z(g, model, batch, x_prime, dropout_rng),
                                   lambda_m));
}

ad::Var loss_adv(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
                 ad::Var x_prime, Phase phase) {
  if (phase != Phase::kAdversarial)
    throw ConfigError("adversarial phase not active");
  if (x_prime.rows() != cell_count(batch) || x_prime.cols() != 1)
    throw ShapeError("x' " + x_prime.value().shape_string() +
                     " does not match " + std::to_string(cell_count(batch)) +
                     " cells");
  ad::FreezeGuard freeze(model.params());
  auto bce = bce_on(g, model, batch, x_prime, nullptr);
  // mean BCE * cells / samples = mean per-sample BCE sum.
  return ad::scale(bce, -static_cast<double>(cell_count(batch)) /
                            static_cast<double>(batch.size()));
}

double mmd_bandwidth(const ad::Array2& x_real, const MmdOptions& opts) {
  if (opts.bandwidth) {
    if (!(*opts.bandwidth > 0.0))
      throw ConfigError("MMD bandwidth must be positive");
    return *opts.bandwidth;
  }
  const auto rows = strided_rows(x_real.rows(), opts.max_points);
  std::vector<double> v;
  v.reserve(rows.size());
  for (auto r : rows) v.push_back(x_real(r, 0));
  const double h = metrics::median_pairwise_distance(v);
  return h > 0.0 ? h : 1.0;
}

ad::Var loss_x(ad::Graph& g, ad::Var x_prime, const ad::Array2& x_real,
               const MmdOptions& opts) {
  if (x_prime.rows() < 2 || x_real.rows() < 2)
    throw DataError("MMD needs at least two values per side");
  if (x_prime.cols() != x_real.cols())
    throw ShapeError("MMD inputs differ in width");
  const double h = mmd_bandwidth(x_real, opts);
  const auto ra = strided_rows(x_prime.rows(), opts.max_points);
  const auto rb = strided_rows(x_real.rows(), opts.max_points);
  auto a = ra.size() == x_prime.rows() ? x_prime : ad::gather_rows(x_prime, ra);
  ad::Array2 bsub(rb.size(), x_real.cols());
  for (std::size_t i = 0; i < rb.size(); ++i)
    for (std::size_t c = 0; c < x_real.cols(); ++c) bsub(i, c) = x_real(rb[i], c);
  auto b = g.constant(std::move(bsub));
  auto v = ad::sub(ad::add(rbf_mean(a, a, h), rbf_mean(b, b, h)),
                   ad::scale(rbf_mean(a, b, h), 2.0));
  // The V-statistic is non-negative; relu removes rounding below zero.
  return ad::relu(v);
}

void DnrConfig::validate(const TrainOptions& train) const {
  if (!(lambda_c >= 0.0 && lambda_c <= 1.0))
    throw ConfigError("dnr.lambda_c must lie in [0, 1]");
  if (!(lambda_m >= 0.0 && lambda_m <= 1.0))
    throw ConfigError("dnr.lambda_m must lie in [0, 1]");
  if (lambda_e > train.epochs)
    throw ConfigError("dnr.lambda_e must not exceed the epoch count");
  if (!(lr_phi > 0.0)) throw ConfigError("dnr.lr_phi must be positive");
  if (noise.kind == noise::Kind::kModel)
    throw ConfigError("dnr.noise.kind must be gaussian or beta");
  auto copy = noise;
  copy.lambda_c = lambda_c;
  copy.validate();
  if (mmd.max_points < 2) throw ConfigError("dnr.mmd_points must be >= 2");
  if (mmd.bandwidth && !(*mmd.bandwidth > 0.0))
    throw ConfigError("dnr.mmd_bandwidth must be positive");
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,phase,l_direct,l_z,l_theta,l_adv,l_x,val_ndcg\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  r.epoch, phase_name(r.phase).c_str(), r.l_direct, r.l_z,
                  r.l_theta, r.l_adv, r.l_x, r.val_ndcg);
    out += buf;
  }
  return out;
}

BaselineResult train_baseline(const TrainOptions& opts,
                              const reranker::RerankerConfig& rcfg,
                              const TrainData& data) {
  if (rcfg.integration == reranker::Integration::kDenoise)
    throw ConfigError("integration 'denoise' is only valid for DNR training");
  Trainer t(opts, rcfg, data);
  TrainHistory history;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    Accumulator acc;
    std::size_t b = 0;
    for (const auto& idx : t.epoch_batches()) {
      const auto batch = t.gather(idx);
      ad::Graph g;
      try {
        auto loss = loss_direct(g, t.model(), batch, t.dropout_rng());
        require_finite(loss.scalar(), epoch, b, "loss");
        acc.l_direct += loss.scalar();
        acc.l_theta += loss.scalar();
        t.step_theta(loss, g);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
      ++acc.batches;
      ++b;
    }
    history.records.push_back(
        close_epoch(epoch, Phase::kWarmup, acc, t.validation_ndcg()));
  }
  BaselineResult r{std::move(t.model()), std::move(history), {}};
  r.validation = data.validation.empty()
                     ? metrics::MetricsReport{}
                     : evaluate(r.model, data.validation, opts.k);
  return r;
}

DnrResult train_dnr(const TrainOptions& opts, const DnrConfig& cfg,
                    const reranker::RerankerConfig& rcfg,
                    const TrainData& data) {
  cfg.validate(opts);
  if (rcfg.integration == reranker::Integration::kNone)
    throw ConfigError("DNR needs a reranker that consumes scores");
  Trainer t(opts, rcfg, data);
  const auto retr_print = ad::fingerprint(data.retriever.params());
  noise::GeneratorModel gen(data.retriever.dim(), cfg.noise.d_noise,
                            t.phi_rng());
  const auto gen_init = ad::fingerprint(gen.params());
  ad::AdamOptions adam_phi;
  adam_phi.lr = cfg.lr_phi;
  adam_phi.weight_decay = opts.weight_decay;

  TrainHistory history;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const Phase phase =
        epoch <= cfg.lambda_e ? Phase::kWarmup : Phase::kAdversarial;
    Accumulator acc;
    std::size_t b = 0;
    for (const auto& idx : t.epoch_batches()) {
      const auto batch = t.gather(idx);
      const auto z = reranker::stacked_labels(batch);
      try {
        ad::Array2 x_prime;
        Rng uniforms = t.noise_rng();
        if (phase == Phase::kWarmup) {
          std::vector<int> zi(z.rows());
          for (std::size_t i = 0; i < zi.size(); ++i)
            zi[i] = static_cast<int>(z(i, 0));
          const auto eps = noise::sample_heuristic(cfg.noise, zi.size(),
                                                   t.noise_rng());
          x_prime = column_of(noise::synthesize_scores(zi, eps, cfg.lambda_c));
        } else {
          ad::Graph gg;
          auto eps = noise::generate_model_noise(gg, gen, batch,
                                                 data.retriever, t.noise_rng());
          x_prime = noise::synthesize_scores(gg, z, eps, cfg.lambda_c).value();
        }

        {
          ad::Graph g;
          auto direct = loss_direct(g, t.model(), batch, t.dropout_rng());
          ad::Var loss = direct;
          double lz_value = 0.0;
          if (cfg.lambda_m == 0.0) {
            // Log L_z without touching the dropout stream, so the update
            // sequence matches the direct baseline exactly.
            ad::Graph side;
            ad::FreezeGuard freeze(t.model().params());
            lz_value = loss_z(side, t.model(), batch, x_prime).scalar();
          } else {
            auto lz = loss_z(g, t.model(), batch, x_prime, t.dropout_rng());
            lz_value = lz.scalar();
            loss = ad::add(direct, ad::scale(lz, cfg.lambda_m));
          }
          require_finite(loss.scalar(), epoch, b, "theta loss");
          acc.l_direct += direct.scalar();
          acc.l_z += lz_value;
          acc.l_theta += loss.scalar();
          t.step_theta(loss, g);
        }

        if (phase == Phase::kAdversarial) {
          // Same uniform block as the theta step, now differentiable in phi.
          ad::Graph g;
          auto eps = noise::generate_model_noise(g, gen, batch, data.retriever,
                                                 uniforms);
          auto xp = noise::synthesize_scores(g, z, eps, cfg.lambda_c);
          auto adv = loss_adv(g, t.model(), batch, xp, phase);
          auto lx = loss_x(g, xp, reranker::stacked_scores(batch), cfg.mmd);
          auto loss = ad::add(adv, lx);
          require_finite(loss.scalar(), epoch, b, "phi loss");
          acc.l_adv += adv.scalar();
          acc.l_x += lx.scalar();
          ++acc.phi_batches;
          g.backward(loss);
          gen.params().clip_grad_norm(opts.clip);
          ad::adam_step(gen.params(), adam_phi);
        }
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
      ++acc.batches;
      ++b;
    }
    history.records.push_back(close_epoch(epoch, phase, acc, t.validation_ndcg()));
  }
  if (ad::fingerprint(data.retriever.params()) != retr_print)
    throw Error("retriever parameters changed during training");

  DnrResult r{std::move(t.model()), std::move(gen), gen_init,
              std::move(history), {}};
  r.validation = data.validation.empty()
                     ? metrics::MetricsReport{}
                     : evaluate(r.model, data.validation, opts.k);
  return r;
}

std::vector<std::vector<double>> predict_all(
    reranker::RerankerModel& model, const std::vector<data::RerankSample>& s) {
  std::vector<std::vector<double>> out;
  out.reserve(s.size());
  ad::FreezeGuard freeze(model.params());
  for (const auto& sample : s) out.push_back(model.predict(sample, sample.x));
  return out;
}

metrics::MetricsReport evaluate(reranker::RerankerModel& model,
                                const std::vector<data::RerankSample>& s,
                                std::size_t k) {
  const auto scores = predict_all(model, s);
  std::vector<std::vector<int>> labels;
  labels.reserve(s.size());
  for (const auto& sample : s) labels.push_back(sample.z);
  return metrics::evaluate(scores, labels, k);
}

metrics::MetricsReport evaluate_identity(
    const std::vector<data::RerankSample>& s, std::size_t k) {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (const auto& sample : s) {
    scores.push_back(sample.x);
    labels.push_back(sample.z);
  }
  return metrics::evaluate(scores, labels, k);
}

std::vector<double> true_noise(const std::vector<data::RerankSample>& s,
                               double lambda_c) {
  if (!(lambda_c > 0.0 && lambda_c <= 1.0))
    throw ConfigError("true noise needs lambda_c in (0, 1]");
  std::vector<double> out;
  for (const auto& sample : s)
    for (std::size_t i = 0; i < sample.size(); ++i)
      out.push_back(std::clamp(
          (sample.x[i] - (1.0 - lambda_c) * sample.z[i]) / lambda_c, 0.0, 1.0));
  return out;
}

std::vector<double> generator_noise(noise::GeneratorModel& gen,
                                    const std::vector<data::RerankSample>& s,
                                    const retriever::MfModel& retr, Rng& rng) {
  if (s.empty()) return {};
  ad::FreezeGuard freeze(gen.params());
  ad::Graph g;
  const auto eps = noise::generate_model_noise(g, gen, s, retr, rng);
  std::vector<double> out(eps.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps.value()(i, 0);
  return out;
}

nlohmann::json to_json(const TrainOptions& o) {
  return {{"epochs", o.epochs}, {"batch_size", o.batch_size},
          {"lr", o.lr},         {"weight_decay", o.weight_decay},
          {"clip", o.clip},     {"k", o.k},
          {"seed", o.seed}};
}

nlohmann::json to_json(const DnrConfig& c) {
  auto n = noise::to_json(c.noise);
  n.erase("lambda_c");
  nlohmann::json j = {{"lambda_c", c.lambda_c}, {"lambda_m", c.lambda_m},
                      {"lambda_e", c.lambda_e}, {"lr_phi", c.lr_phi},
                      {"mmd_points", c.mmd.max_points}, {"noise", n}};
  j["mmd_bandwidth"] = c.mmd.bandwidth ? nlohmann::json(*c.mmd.bandwidth)
                                       : nlohmann::json("median");
  return j;
}

}  // namespace dnr::objectives
