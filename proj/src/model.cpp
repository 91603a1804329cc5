#include "civest/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "civest/distributions.hpp"
#include "civest/error.hpp"
#include "civest/jsonio.hpp"

namespace civest {

namespace {

using jsonio::json;

void append(std::vector<nn::Param*>& out, nn::Mlp& net) {
  for (auto* p : net.params()) out.push_back(p);
}

void append(std::vector<const nn::Param*>& out, const nn::Mlp& net) {
  for (const auto* p : net.params()) out.push_back(p);
}

Eigen::MatrixXd standard_normal(long rows, long cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) m(i, j) = n01(rng);
  }
  return m;
}

// Splits a (mu, log sigma) network output in half, clamping log sigma.
std::pair<ad::Value, ad::Value> split_gaussian_params(ad::Value out, long dim) {
  ad::Value mu = ad::cols(out, 0, dim);
  ad::Value ls = ad::clamp(ad::cols(out, dim, dim), kLogSigmaMin, kLogSigmaMax);
  return {mu, ls};
}

}  // namespace

OutcomeKind outcome_kind_from_string(const std::string& s) {
  if (s == "continuous") return OutcomeKind::continuous;
  if (s == "binary") return OutcomeKind::binary;
  throw DataError("unknown outcome kind '" + s + "' (expected continuous or binary)");
}

std::string to_string(OutcomeKind k) {
  return k == OutcomeKind::continuous ? "continuous" : "binary";
}

void ModelConfig::validate() const {
  if (d_s < 1 || d_c < 1 || d_f < 1) throw DataError("latent dims must be >= 1");
  for (long h : hidden) {
    if (h < 1) throw DataError("hidden layer sizes must be >= 1");
  }
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw DataError("alpha and beta must be finite and >= 0");
  }
  if (epochs < 0) throw DataError("epochs must be >= 0");
  if (batch_size < 1) throw DataError("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw DataError("learning rate must be finite and > 0");
  }
  if (mc_samples < 1) throw DataError("mc_samples must be >= 1");
  if (kl_warmup_epochs < 0) throw DataError("kl_warmup_epochs must be >= 0");
  if (kl_warmup_epochs > epochs) {
    throw DataError("kl_warmup_epochs must not exceed epochs (the ramp must finish)");
  }
}

json ModelConfig::to_json() const {
  json j;
  j["d_s"] = d_s;
  j["d_c"] = d_c;
  j["d_f"] = d_f;
  j["hidden"] = hidden;
  j["activation"] = nn::to_string(activation);
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["outcome"] = to_string(outcome);
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["mc_samples"] = mc_samples;
  j["kl_warmup_epochs"] = kl_warmup_epochs;
  j["seed"] = seed;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  const std::string ctx = "model config";
  jsonio::require_keys(j, ctx,
                       {"d_s", "d_c", "d_f", "hidden", "activation", "alpha", "beta", "outcome",
                        "epochs", "batch_size", "learning_rate", "mc_samples", "kl_warmup_epochs",
                        "seed"});
  ModelConfig cfg;
  cfg.d_s = jsonio::get_or<long>(j, ctx, "d_s", cfg.d_s);
  cfg.d_c = jsonio::get_or<long>(j, ctx, "d_c", cfg.d_c);
  cfg.d_f = jsonio::get_or<long>(j, ctx, "d_f", cfg.d_f);
  cfg.hidden = jsonio::get_or<std::vector<long>>(j, ctx, "hidden", cfg.hidden);
  cfg.activation = nn::activation_from_string(
      jsonio::get_or<std::string>(j, ctx, "activation", nn::to_string(cfg.activation)));
  cfg.alpha = jsonio::get_or<double>(j, ctx, "alpha", cfg.alpha);
  cfg.beta = jsonio::get_or<double>(j, ctx, "beta", cfg.beta);
  cfg.outcome = outcome_kind_from_string(
      jsonio::get_or<std::string>(j, ctx, "outcome", to_string(cfg.outcome)));
  cfg.epochs = jsonio::get_or<long>(j, ctx, "epochs", cfg.epochs);
  cfg.batch_size = jsonio::get_or<long>(j, ctx, "batch_size", cfg.batch_size);
  cfg.learning_rate = jsonio::get_or<double>(j, ctx, "learning_rate", cfg.learning_rate);
  cfg.mc_samples = jsonio::get_or<long>(j, ctx, "mc_samples", cfg.mc_samples);
  cfg.kl_warmup_epochs = jsonio::get_or<long>(j, ctx, "kl_warmup_epochs", cfg.kl_warmup_epochs);
  cfg.seed = jsonio::get_or<std::uint64_t>(j, ctx, "seed", cfg.seed);
  cfg.validate();
  return cfg;
}

std::vector<nn::Param*> ModelParams::params(OutcomeKind kind) {
  std::vector<nn::Param*> out;
  append(out, enc_s);
  append(out, enc_c);
  append(out, enc_f);
  append(out, prior_c);
  append(out, dec_x);
  append(out, head_w);
  if (kind == OutcomeKind::continuous) {
    append(out, psi2);
    append(out, psi3);
    append(out, psi4);
    append(out, psi5);
  } else {
    append(out, psi6);
  }
  return out;
}

std::vector<nn::Param*> ModelParams::all_params() {
  std::vector<nn::Param*> out;
  append(out, enc_s);
  append(out, enc_c);
  append(out, enc_f);
  append(out, prior_c);
  append(out, dec_x);
  append(out, head_w);
  append(out, psi2);
  append(out, psi3);
  append(out, psi4);
  append(out, psi5);
  append(out, psi6);
  return out;
}

std::vector<const nn::Param*> ModelParams::all_params() const {
  std::vector<const nn::Param*> out;
  append(out, enc_s);
  append(out, enc_c);
  append(out, enc_f);
  append(out, prior_c);
  append(out, dec_x);
  append(out, head_w);
  append(out, psi2);
  append(out, psi3);
  append(out, psi4);
  append(out, psi5);
  append(out, psi6);
  return out;
}

ModelParams init_model(const ModelConfig& cfg, long x_dim, std::mt19937_64& rng) {
  cfg.validate();
  if (x_dim < 1) throw DataError("covariate dimension must be >= 1");
  const auto& h = cfg.hidden;
  const auto act = cfg.activation;
  ModelParams p;
  p.x_dim = x_dim;
  const long d_cf = cfg.d_c + cfg.d_f;
  // Fixed construction order so a seed pins every network's weights.
  p.enc_s = nn::Mlp("enc_s", x_dim, h, 2 * cfg.d_s, act, rng);
  p.enc_c = nn::Mlp("enc_c", x_dim, h, 2 * cfg.d_c, act, rng);
  p.enc_f = nn::Mlp("enc_f", x_dim, h, 2 * cfg.d_f, act, rng);
  p.prior_c = nn::Mlp("prior_c", x_dim, h, 2 * cfg.d_c, act, rng);
  p.dec_x = nn::Mlp("dec_x", cfg.d_s + d_cf, h, 2 * x_dim, act, rng);
  p.head_w = nn::Mlp("head_w", cfg.d_s + cfg.d_c, h, 1, act, rng);
  p.psi2 = nn::Mlp("psi2", d_cf, h, 1, act, rng);
  p.psi3 = nn::Mlp("psi3", d_cf, h, 1, act, rng);
  p.psi4 = nn::Mlp("psi4", d_cf, h, 1, act, rng);
  p.psi5 = nn::Mlp("psi5", d_cf, h, 1, act, rng);
  p.psi6 = nn::Mlp("psi6", 1 + d_cf, h, 1, act, rng);
  return p;
}

ModelParams init_model(const ModelConfig& cfg, long x_dim) {
  std::mt19937_64 rng(cfg.seed);
  return init_model(cfg, x_dim, rng);
}

LatentPosteriors encode(ModelParams& params, const Eigen::MatrixXd& x) {
  auto head = [](Eigen::MatrixXd out, long dim) {
    DiagGaussianBatch b;
    b.mu = out.leftCols(dim);
    b.sigma = out.rightCols(dim).array().max(kLogSigmaMin).min(kLogSigmaMax).exp();
    return b;
  };
  LatentPosteriors post;
  post.qs = head(params.enc_s.forward(x), params.enc_s.out_dim() / 2);
  post.qc = head(params.enc_c.forward(x), params.enc_c.out_dim() / 2);
  post.qf = head(params.enc_f.forward(x), params.enc_f.out_dim() / 2);
  return post;
}

LatentNoise draw_noise(long n, const ModelConfig& cfg, std::mt19937_64& rng) {
  LatentNoise noise;
  noise.s = standard_normal(n, cfg.d_s, rng);
  noise.c = standard_normal(n, cfg.d_c, rng);
  noise.f = standard_normal(n, cfg.d_f, rng);
  return noise;
}

ad::Value build_loss(ad::Tape& tape, ModelParams& params, const Batch& batch,
                     const ModelConfig& cfg, const std::vector<LatentNoise>& draws,
                     LossTerms* terms, double kl_scale) {
  if (!(kl_scale >= 0.0) || !std::isfinite(kl_scale)) {
    throw DataError("kl_scale must be finite and >= 0");
  }
  const long n = batch.x.rows();
  if (n == 0) throw DataError("empty batch");
  if (batch.w.size() != n || batch.y.size() != n) {
    throw DimMismatchError("batch w/y length", n, std::min(batch.w.size(), batch.y.size()));
  }
  if (draws.empty()) throw DataError("need at least one latent draw");

  ad::Value x = tape.constant(batch.x);
  ad::Value w = tape.constant(batch.w);
  ad::Value y = tape.constant(batch.y);
  ad::Value one_minus_w = ad::add_scalar(ad::neg(w), 1.0);

  auto [mu_s, ls_s] = split_gaussian_params(params.enc_s.forward(tape, x), cfg.d_s);
  auto [mu_c, ls_c] = split_gaussian_params(params.enc_c.forward(tape, x), cfg.d_c);
  auto [mu_f, ls_f] = split_gaussian_params(params.enc_f.forward(tape, x), cfg.d_f);
  auto [mu_pc, ls_pc] = split_gaussian_params(params.prior_c.forward(tape, x), cfg.d_c);

  // Closed-form KL terms are independent of the Monte-Carlo draws.
  ad::Value kl_s = kl_std_normal(mu_s, ls_s);
  ad::Value kl_c = kl_diag_gaussians(mu_c, ls_c, mu_pc, ls_pc);
  ad::Value kl_f = kl_std_normal(mu_f, ls_f);

  ad::Value recon_sum, aux_w_sum, aux_y_sum;
  for (std::size_t k = 0; k < draws.size(); ++k) {
    const LatentNoise& noise = draws[k];
    ad::Value s = reparameterize(mu_s, ls_s, noise.s);
    ad::Value c = reparameterize(mu_c, ls_c, noise.c);
    ad::Value f = reparameterize(mu_f, ls_f, noise.f);

    ad::Value dec_out = params.dec_x.forward(tape, ad::hcat({s, c, f}));
    auto [mu_x, ls_x] = split_gaussian_params(dec_out, params.x_dim);
    ad::Value recon = gaussian_logpdf(x, mu_x, ls_x);

    ad::Value w_logit = params.head_w.forward(tape, ad::hcat({s, c}));
    ad::Value aux_w = bernoulli_logpmf_logits(w_logit, batch.w);

    ad::Value aux_y;
    if (cfg.outcome == OutcomeKind::continuous) {
      ad::Value cf = ad::hcat({c, f});
      ad::Value mu_y = ad::add(ad::mul(w, params.psi2.forward(tape, cf)),
                               ad::mul(one_minus_w, params.psi3.forward(tape, cf)));
      // With w in {0,1} the per-arm mix commutes with exp, so mixing log
      // sigmas here equals mixing the variances the heads represent.
      ad::Value ls_y = ad::clamp(ad::add(ad::mul(w, params.psi4.forward(tape, cf)),
                                         ad::mul(one_minus_w, params.psi5.forward(tape, cf))),
                                 kLogSigmaMin, kLogSigmaMax);
      aux_y = gaussian_logpdf(y, mu_y, ls_y);
    } else {
      ad::Value y_logit = params.psi6.forward(tape, ad::hcat({w, c, f}));
      aux_y = bernoulli_logpmf_logits(y_logit, batch.y);
    }

    if (k == 0) {
      recon_sum = recon;
      aux_w_sum = aux_w;
      aux_y_sum = aux_y;
    } else {
      recon_sum = ad::add(recon_sum, recon);
      aux_w_sum = ad::add(aux_w_sum, aux_w);
      aux_y_sum = ad::add(aux_y_sum, aux_y);
    }
  }
  const double inv_k = 1.0 / static_cast<double>(draws.size());
  ad::Value recon_avg = ad::scale(recon_sum, inv_k);
  ad::Value aux_w_avg = ad::scale(aux_w_sum, inv_k);
  ad::Value aux_y_avg = ad::scale(aux_y_sum, inv_k);

  ad::Value kl_total = ad::add(ad::add(kl_s, kl_c), kl_f);
  ad::Value neg_elbo = ad::neg(ad::mean_all(ad::sub(recon_avg, kl_total)));
  // kl_scale != 1 only changes the node used for gradients (the warm-up
  // ramp); the reported breakdown below keeps the unscaled quantities.
  ad::Value neg_elbo_opt =
      kl_scale == 1.0
          ? neg_elbo
          : ad::neg(ad::mean_all(ad::sub(recon_avg, ad::scale(kl_total, kl_scale))));
  ad::Value aux_terms = ad::add(ad::scale(ad::mean_all(aux_w_avg), -cfg.alpha),
                                ad::scale(ad::mean_all(aux_y_avg), -cfg.beta));
  ad::Value total = ad::add(neg_elbo_opt, aux_terms);

  if (terms) {
    terms->recon = recon_avg.data().mean();
    terms->kl_s = kl_s.data().mean();
    terms->kl_c = kl_c.data().mean();
    terms->kl_f = kl_f.data().mean();
    terms->aux_w = aux_w_avg.data().mean();
    terms->aux_y = aux_y_avg.data().mean();
    terms->neg_elbo = neg_elbo.item();
    terms->loss = neg_elbo.item() + aux_terms.item();
  }
  return total;
}

namespace {

LossTerms evaluate_terms(ModelParams& params, const Batch& batch, const ModelConfig& cfg,
                         std::mt19937_64& rng) {
  std::vector<LatentNoise> draws;
  draws.reserve(static_cast<std::size_t>(cfg.mc_samples));
  for (long k = 0; k < cfg.mc_samples; ++k) {
    draws.push_back(draw_noise(batch.x.rows(), cfg, rng));
  }
  ad::Tape tape;
  LossTerms terms;
  build_loss(tape, params, batch, cfg, draws, &terms);
  return terms;
}

}  // namespace

LossTerms elbo(ModelParams& params, const Batch& batch, const ModelConfig& cfg,
               std::mt19937_64& rng) {
  return evaluate_terms(params, batch, cfg, rng);
}

LossTerms loss(ModelParams& params, const Batch& batch, const ModelConfig& cfg,
               std::mt19937_64& rng) {
  return evaluate_terms(params, batch, cfg, rng);
}

TrainedModel train(const Dataset& train_data, const ModelConfig& cfg) {
  cfg.validate();
  train_data.validate();
  const long n = train_data.rows();
  const long p = train_data.feature_count();
  if (n < 1 || p < 1) throw DataError("training data must have rows and features");
  if (cfg.outcome == OutcomeKind::binary) {
    for (long i = 0; i < n; ++i) {
      if (train_data.y(i) != 0.0 && train_data.y(i) != 1.0) {
        throw DataError("binary outcome model given a non-binary outcome at row " +
                        std::to_string(i));
      }
    }
  }

  TrainedModel model;
  model.config = cfg;
  model.feature_names = train_data.x_names;
  model.x_std = Standardizer::fit(train_data.x);
  const Eigen::MatrixXd xs = model.x_std.transform(train_data.x);

  Eigen::VectorXd ys = train_data.y;
  if (cfg.outcome == OutcomeKind::continuous) {
    model.y_mean = ys.mean();
    if (n >= 2) {
      const double var = (ys.array() - model.y_mean).square().sum() / double(n - 1);
      const double sd = std::sqrt(var);
      if (sd > 1e-12) model.y_std = sd;
    }
    ys = (ys.array() - model.y_mean) / model.y_std;
  }

  std::mt19937_64 rng(cfg.seed);
  model.params = init_model(cfg, p, rng);
  nn::AdamConfig opt_cfg;
  opt_cfg.lr = cfg.learning_rate;
  nn::Adam opt(model.params.params(cfg.outcome), opt_cfg);

  const long batch_size = std::min(cfg.batch_size, n);
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Linear KL warm-up: reaches the full weight at epoch kl_warmup_epochs,
    // so at least the final (epochs - kl_warmup_epochs) epochs optimize the
    // complete objective.
    const double kl_scale =
        (cfg.kl_warmup_epochs > 0 && epoch < cfg.kl_warmup_epochs)
            ? static_cast<double>(epoch + 1) / static_cast<double>(cfg.kl_warmup_epochs)
            : 1.0;
    std::shuffle(order.begin(), order.end(), rng);
    LossTerms epoch_sum;
    for (long start = 0; start < n; start += batch_size) {
      const long rows = std::min(batch_size, n - start);
      Batch batch;
      batch.x.resize(rows, p);
      batch.w.resize(rows);
      batch.y.resize(rows);
      for (long i = 0; i < rows; ++i) {
        const long r = order[start + i];
        batch.x.row(i) = xs.row(r);
        batch.w(i) = train_data.w(r);
        batch.y(i) = ys(r);
      }
      std::vector<LatentNoise> draws;
      draws.reserve(static_cast<std::size_t>(cfg.mc_samples));
      for (long k = 0; k < cfg.mc_samples; ++k) draws.push_back(draw_noise(rows, cfg, rng));

      const std::string where =
          " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(start / batch_size) + ")";
      ad::Tape tape;
      LossTerms terms;
      ad::Value loss_value = build_loss(tape, model.params, batch, cfg, draws, &terms, kl_scale);
      if (!std::isfinite(terms.loss)) throw NumericError("non-finite training loss" + where);
      opt.zero_grad();
      tape.backward(loss_value);
      try {
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + where);
      }

      const double scale = static_cast<double>(rows);
      epoch_sum.loss += terms.loss * scale;
      epoch_sum.neg_elbo += terms.neg_elbo * scale;
      epoch_sum.recon += terms.recon * scale;
      epoch_sum.kl_s += terms.kl_s * scale;
      epoch_sum.kl_c += terms.kl_c * scale;
      epoch_sum.kl_f += terms.kl_f * scale;
      epoch_sum.aux_w += terms.aux_w * scale;
      epoch_sum.aux_y += terms.aux_y * scale;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    LossTerms epoch_mean;
    epoch_mean.loss = epoch_sum.loss * inv_n;
    epoch_mean.neg_elbo = epoch_sum.neg_elbo * inv_n;
    epoch_mean.recon = epoch_sum.recon * inv_n;
    epoch_mean.kl_s = epoch_sum.kl_s * inv_n;
    epoch_mean.kl_c = epoch_sum.kl_c * inv_n;
    epoch_mean.kl_f = epoch_sum.kl_f * inv_n;
    epoch_mean.aux_w = epoch_sum.aux_w * inv_n;
    epoch_mean.aux_y = epoch_sum.aux_y * inv_n;
    model.history.epochs.push_back(epoch_mean);
  }
  return model;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> extract_representations(
    TrainedModel& model, const Eigen::MatrixXd& x_raw) {
  const Eigen::MatrixXd xs = model.x_std.transform(x_raw);
  LatentPosteriors post = encode(model.params, xs);
  Eigen::MatrixXd zrep(xs.rows(), post.qc.dim() + post.qf.dim());
  zrep << post.qc.mu, post.qf.mu;
  return {post.qs.mu, zrep};
}

void save_checkpoint(const std::string& path, const TrainedModel& model) {
  json j;
  j["format"] = "civest-checkpoint";
  j["version"] = 1;
  j["config"] = model.config.to_json();
  j["x_dim"] = model.params.x_dim;
  j["feature_names"] = model.feature_names;
  j["x_mean"] = jsonio::vector_to_json(model.x_std.mean());
  j["x_std"] = jsonio::vector_to_json(model.x_std.stddev());
  j["y_mean"] = model.y_mean;
  j["y_std"] = model.y_std;
  json weights;
  for (const auto* p : model.params.all_params()) {
    weights[p->name] = jsonio::matrix_to_json(p->value);
  }
  j["params"] = std::move(weights);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

TrainedModel load_checkpoint(const std::string& path) {
  const json j = jsonio::load_json_file(path);
  const std::string ctx = "checkpoint '" + path + "'";
  if (jsonio::get_or<std::string>(j, ctx, "format", "") != "civest-checkpoint") {
    throw DataError(ctx + ": not a model checkpoint");
  }
  if (jsonio::get<long>(j, ctx, "version") != 1) {
    throw DataError(ctx + ": unsupported checkpoint version");
  }
  TrainedModel model;
  model.config = ModelConfig::from_json(jsonio::require(j, ctx, "config"));
  const long x_dim = jsonio::get<long>(j, ctx, "x_dim");
  model.params = init_model(model.config, x_dim);
  model.feature_names = jsonio::get<std::vector<std::string>>(j, ctx, "feature_names");
  model.x_std = Standardizer::from_moments(
      jsonio::vector_from_json(jsonio::require(j, ctx, "x_mean"), ctx + ": x_mean"),
      jsonio::vector_from_json(jsonio::require(j, ctx, "x_std"), ctx + ": x_std"));
  model.y_mean = jsonio::get<double>(j, ctx, "y_mean");
  model.y_std = jsonio::get<double>(j, ctx, "y_std");

  const json& weights = jsonio::require(j, ctx, "params");
  auto params = model.params.all_params();
  if (weights.size() != params.size()) {
    throw DataError(ctx + ": expected " + std::to_string(params.size()) +
                    " weight arrays, found " + std::to_string(weights.size()));
  }
  for (auto* p : params) {
    auto it = weights.find(p->name);
    if (it == weights.end()) throw DataError(ctx + ": missing weights for '" + p->name + "'");
    Eigen::MatrixXd m = jsonio::matrix_from_json(*it, ctx + ": " + p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw DataError(ctx + ": shape mismatch for '" + p->name + "'");
    }
    p->value = std::move(m);
    p->grad.setZero();
  }
  if (model.x_std.mean().size() != x_dim ||
      static_cast<long>(model.feature_names.size()) != x_dim) {
    throw DataError(ctx + ": standardizer/feature-name width disagrees with x_dim");
  }
  return model;
}

void save_history(const std::string& path, const TrainHistory& history) {
  json epochs = json::array();
  for (const auto& t : history.epochs) {
    epochs.push_back({{"loss", t.loss},
                      {"neg_elbo", t.neg_elbo},
                      {"recon", t.recon},
                      {"kl_s", t.kl_s},
                      {"kl_c", t.kl_c},
                      {"kl_f", t.kl_f},
                      {"aux_w", t.aux_w},
                      {"aux_y", t.aux_y}});
  }
  json j;
  j["format"] = "civest-history";
  j["version"] = 1;
  j["epochs"] = std::move(epochs);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace civest
