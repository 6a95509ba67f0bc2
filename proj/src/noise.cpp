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

#include "dnr/noise.hpp"

#include <algorithm>
#include <cmath>

#include "dnr/error.hpp"

namespace dnr::noise {
namespace {

void check_lambda(double lambda_c) {
  if (!(lambda_c >= 0.0 && lambda_c <= 1.0))
    throw ConfigError("lambda_c must lie in [0, 1]");
}

}  // namespace

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::kGaussian:
      return "gaussian";
    case Kind::kBeta:
      return "beta";
    case Kind::kModel:
      return "model";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  if (s == "gaussian") return Kind::kGaussian;
  if (s == "beta") return Kind::kBeta;
  if (s == "model") return Kind::kModel;
  throw ConfigError("unknown noise kind '" + s + "'");
}

void NoiseSpec::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(mu))
    throw ConfigError("gaussian noise needs finite mu and sigma >= 0");
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw ConfigError("beta shapes must be positive");
  if (d_noise == 0) throw ConfigError("d_noise must be positive");
  check_lambda(lambda_c);
}

nlohmann::json to_json(const NoiseSpec& spec) {
  return {{"kind", kind_name(spec.kind)}, {"mu", spec.mu},
          {"sigma", spec.sigma},         {"alpha", spec.alpha},
          {"beta", spec.beta},           {"d_noise", spec.d_noise},
          {"lambda_c", spec.lambda_c}};
}

NoiseSpec spec_from_json(const nlohmann::json& j) {
  NoiseSpec s;
  if (!j.is_object()) throw ConfigError("noise spec must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind")
        s.kind = parse_kind(value.get<std::string>());
      else if (key == "mu")
        s.mu = value.get<double>();
      else if (key == "sigma")
        s.sigma = value.get<double>();
      else if (key == "alpha")
        s.alpha = value.get<double>();
      else if (key == "beta")
        s.beta = value.get<double>();
      else if (key == "d_noise")
        s.d_noise = value.get<std::size_t>();
      else if (key == "lambda_c")
        s.lambda_c = value.get<double>();
      else
        throw ConfigError("unknown key 'noise." + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad noise spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<double> gaussian_draws(std::size_t n, double mu, double sigma,
                                   Rng& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
  std::vector<double> out(n);
  for (auto& v : out) v = mu + sigma * rng.normal();
  return out;
}

std::vector<double> sample_gaussian(std::size_t n, double mu, double sigma,
                                    Rng& rng) {
  auto out = gaussian_draws(n, mu, sigma, rng);
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0)) throw ConfigError("gamma shape must be positive");
  if (shape < 1.0) {
    const double g = sample_gamma(shape + 1.0, rng);
    return g * std::pow(rng.uniform_pos(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform_pos();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> sample_beta(std::size_t n, double alpha, double beta,
                                Rng& rng) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw ConfigError("beta shapes must be positive");
  std::vector<double> out(n);
  for (auto& v : out) {
    do {
      const double a = sample_gamma(alpha, rng);
      const double b = sample_gamma(beta, rng);
      v = a / (a + b);
    } while (!(v > 0.0 && v < 1.0));
  }
  return out;
}

std::vector<double> sample_heuristic(const NoiseSpec& spec, std::size_t n,
                                     Rng& rng) {
  switch (spec.kind) {
    case Kind::kGaussian:
      return sample_gaussian(n, spec.mu, spec.sigma, rng);
    case Kind::kBeta:
      return sample_beta(n, spec.alpha, spec.beta, rng);
    case Kind::kModel:
      break;
  }
  throw ConfigError("heuristic noise must be gaussian or beta");
}

GeneratorModel::GeneratorModel(std::size_t emb_dim, std::size_t d_noise,
                               Rng& rng, double init_gain)
    : emb_dim_(emb_dim), d_noise_(d_noise) {
  if (d_noise == 0) throw ConfigError("d_noise must be positive");
  params_.add_xavier("gen.w1", input_width(), kHidden, rng, init_gain);
  params_.add_zeros("gen.b1", 1, kHidden);
  params_.add_xavier("gen.w2", kHidden, 1, rng, init_gain);
  params_.add_zeros("gen.b2", 1, 1);
}

ad::Var GeneratorModel::forward(ad::Graph& g, const ad::Array2& features) {
  if (features.cols() != input_width())
    throw ShapeError("generator expects " + std::to_string(input_width()) +
                     " input columns, got " + std::to_string(features.cols()));
  auto x = g.constant(features);
  auto h = ad::relu(ad::add(ad::matmul(x, g.param(params_, "gen.w1")),
                            g.param(params_, "gen.b1")));
  return ad::sigmoid(ad::add(ad::matmul(h, g.param(params_, "gen.w2")),
                             g.param(params_, "gen.b2")));
}

ad::Array2 generator_features(const GeneratorModel& gen,
                              const data::RerankSample& sample,
                              const retriever::MfModel& retr, Rng& rng) {
  const auto& ue = retr.params().value("user_emb");
  const auto& ie = retr.params().value("item_emb");
  if (ue.cols() != gen.emb_dim() || ie.cols() != gen.emb_dim())
    throw ShapeError("generator embedding width " +
                     std::to_string(gen.emb_dim()) +
                     " does not match retriever width " +
                     std::to_string(ue.cols()));
  if (sample.user >= ue.rows())
    throw ShapeError("sample user outside the retriever embedding table");
  if (sample.z.size() != sample.candidates.size())
    throw ShapeError("sample z and candidates differ in length");
  const std::size_t n = sample.size();
  const std::size_t d = gen.emb_dim();
  ad::Array2 f(n, gen.input_width());
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t item = sample.candidates[r];
    if (item >= ie.rows())
      throw ShapeError("candidate outside the retriever embedding table");
    f(r, 0) = sample.z[r];
    for (std::size_t k = 0; k < d; ++k) {
      f(r, 1 + k) = ue(sample.user, k);
      f(r, 1 + d + k) = ie(item, k);
    }
    for (std::size_t k = 0; k < gen.d_noise(); ++k)
      f(r, 1 + 2 * d + k) = rng.uniform();
  }
  return f;
}

ad::Var generate_model_noise(ad::Graph& g, GeneratorModel& gen,
                             std::span<const data::RerankSample> samples,
                             const retriever::MfModel& retr, Rng& rng) {
  if (samples.empty()) throw DataError("empty batch");
  std::size_t rows = 0;
  for (const auto& s : samples) rows += s.size();
  ad::Array2 features(rows, gen.input_width());
  std::size_t at = 0;
  for (const auto& s : samples) {
    const auto f = generator_features(gen, s, retr, rng);
    std::ranges::copy(f.data(), features.data().begin() +
                                    static_cast<std::ptrdiff_t>(
                                        at * gen.input_width()));
    at += s.size();
  }
  return gen.forward(g, features);
}

std::vector<double> synthesize_scores(std::span<const int> z,
                                      std::span<const double> eps,
                                      double lambda_c) {
  check_lambda(lambda_c);
  if (z.size() != eps.size())
    throw ShapeError("synthesize_scores: z and eps differ in length");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = (1.0 - lambda_c) * z[i] + lambda_c * eps[i];
  return out;
}

ad::Var synthesize_scores(ad::Graph& g, const ad::Array2& z, ad::Var eps,
                          double lambda_c) {
  check_lambda(lambda_c);
  if (z.rows() != eps.rows() || z.cols() != eps.cols())
    throw ShapeError("synthesize_scores: z " + z.shape_string() +
                     " vs eps " + eps.value().shape_string());
  ad::Array2 base = z;
  for (std::size_t k = 0; k < base.size(); ++k) base[k] *= 1.0 - lambda_c;
  return ad::add(g.constant(std::move(base)), ad::scale(eps, lambda_c));
}

}  // namespace dnr::noise
