#include "specmix/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "specmix/errors.hpp"

namespace specmix {

using nlohmann::json;

void TrainConfig::validate() const {
  for (double l : {lambda0, lambda1, lambda2, lambda_pq})
    if (!(l >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (materials < 2) throw ConfigError("materials must be at least 2");
  if (components < materials) throw ConfigError("components must be at least materials");
  if (latent == 0) throw ConfigError("latent must be positive");
  if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
}

ModelConfig TrainConfig::model_config(std::size_t bands) const {
  ModelConfig m;
  m.bands = bands;
  m.materials = materials;
  m.components = components;
  m.latent = latent;
  m.noise_dim = noise_dim;
  m.use_encoder = use_encoder;
  m.use_uncertainty = use_uncertainty;
  m.use_wgan = use_wgan;
  return m;
}

namespace {

template <class F>
void for_each_field(TrainConfig& c, F&& f) {
  f("lambda0", c.lambda0);
  f("lambda1", c.lambda1);
  f("lambda2", c.lambda2);
  f("lambda_pq", c.lambda_pq);
  f("learning_rate", c.learning_rate);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("adam_eps", c.adam_eps);
  f("batch_size", c.batch_size);
  f("iterations", c.iterations);
  f("materials", c.materials);
  f("components", c.components);
  f("latent", c.latent);
  f("noise_dim", c.noise_dim);
  f("seed", c.seed);
  f("use_encoder", c.use_encoder);
  f("use_uncertainty", c.use_uncertainty);
  f("use_wgan", c.use_wgan);
  f("checkpoint_every", c.checkpoint_every);
}

template <class T>
void read_field(const json& v, const std::string& key, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError("config key '" + key + "' must be a nonnegative integer");
    out = v.get<T>();
  } else {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    out = v.get<double>();
  }
}

}  // namespace

std::string to_json(const TrainConfig& config) {
  json j = json::object();
  TrainConfig c = config;
  for_each_field(c, [&](const char* key, auto& value) { j[key] = value; });
  return j.dump(2) + "\n";
}

void apply_json(TrainConfig& config, std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::size_t matched = 0;
  for_each_field(config, [&](const char* key, auto& value) {
    auto it = j.find(key);
    if (it == j.end()) return;
    read_field(*it, key, value);
    ++matched;
  });
  if (matched != j.size()) {
    TrainConfig probe;
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool known = false;
      for_each_field(probe, [&](const char* key, auto&) { known = known || it.key() == key; });
      if (!known) throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }
}

std::string format_history_row(const HistoryRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g", r.iteration, r.reconstruction, r.adversarial, r.penalty);
  return buf;
}

namespace {

struct Optimizers {
  AdamState encoder, mixture, residual, uncertainty, critic;

  explicit Optimizers(const UnmixModel& m)
      : encoder(m.encoder ? AdamState::for_group(m.encoder->group) : AdamState{}),
        mixture(AdamState::for_group(m.mixture.group)),
        residual(AdamState::for_group(m.decoder.residual)),
        uncertainty(AdamState::for_group(m.decoder.uncertainty)),
        critic(AdamState::for_group(m.critic.group)) {}
};

std::vector<Tensor> combine(const std::vector<Tensor>& re, double c_re, const std::vector<Tensor>* adv, double c_adv) {
  std::vector<Tensor> out(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) {
    out[i] = Tensor(re[i].shape());
    auto o = out[i].data();
    auto a = re[i].data();
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = c_re * a[j];
    if (adv && c_adv != 0.0) {
      auto b = (*adv)[i].data();
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += c_adv * b[j];
    }
  }
  return out;
}

Tensor abs_normalized(const Tensor& x) {
  Tensor out = x;
  const std::size_t B = x.dim(0), D = x.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += std::abs(x(b, d));
    for (std::size_t d = 0; d < D; ++d) out(b, d) = x(b, d) / (s + kAbundanceEps);
  }
  return out;
}

class Trainer {
 public:
  Trainer(const PixelSet& pixels, const TrainConfig& cfg, UnmixModel& model)
      : cfg_(cfg),
        model_(model),
        opt_(model),
        adam_(cfg.adam()),
        stream_(pixels, cfg.batch_size, derive_seed(cfg.seed, 11)),
        eta_rng_(derive_seed(cfg.seed, 12)),
        u_rng_(derive_seed(cfg.seed, 13)) {}

  HistoryRow step(std::size_t iteration) {
    const ModelConfig& mc = model_.config;
    const std::size_t L = mc.effective_noise_dim();
    Batch batch = stream_.next();
    const std::size_t B = batch.rows.size();
    Tensor eta = standard_normal(Shape{B, L}, eta_rng_);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> u(B);
    for (double& v : u) v = unit(u_rng_);

    HistoryRow row;
    row.iteration = iteration;

    // generator forward
    Tape tape;
    Var x = tape.constant(batch.raw);
    BoundGroup enc_vars;
    Var z = x;
    Var enc_norm;
    if (model_.encoder) {
      enc_vars = bind(tape, model_.encoder->group, true);
      z = encode(x, enc_vars, model_.encoder->config, &model_.encoder->bn, nn::Mode::train);
      enc_norm = squared_norm(enc_vars);
    }
    BoundGroup mix_vars = bind(tape, model_.mixture.group, true);
    DecoderVars dec_vars{bind(tape, model_.decoder.residual, true), bind(tape, model_.decoder.uncertainty, true)};
    AbundanceResult ab = abundances(z, mix_vars, model_.mixture_config());
    Var x_hat = reconstruct(ab.abundances, model_.endmembers, tape.constant(eta), dec_vars, model_.decoder_config());
    Var l_re = reconstruction_loss(x, x_hat, ab.abundances, enc_norm, cfg_.weights());
    row.reconstruction = l_re.value().item();

    // critic ascent on its own tape
    Var l_adv_gen;
    if (mc.use_wgan) {
      {
        Tape ct;
        BoundGroup crit_vars = bind(ct, model_.critic.group, true);
        Var real = ct.constant(batch.normalized);
        Var fake = ct.constant(abs_normalized(x_hat.value()));
        AdversarialTerms terms = adversarial_loss(real, fake, crit_vars, cfg_.lambda_pq, u, &model_.critic.bn);
        row.adversarial = terms.loss.value().item();
        row.penalty = terms.penalty.value().item();
        GradientMap g = backward(ad::neg(terms.loss));
        adam_step(model_.critic.group, collect_gradients(g, crit_vars), opt_.critic, adam_);
      }
      BoundGroup crit_consts = bind(tape, model_.critic.group, false);
      Var scores = discriminate(l1_normalize_spectra(x_hat, kAbundanceEps), crit_consts, nullptr, nn::Mode::train);
      l_adv_gen = ad::neg(ad::mean(scores));
    }

    // one backward per loss, then per-group linear combination
    GradientMap g_re = backward(l_re);
    std::vector<Tensor> mix_re = collect_gradients(g_re, mix_vars);
    std::vector<Tensor> res_re = collect_gradients(g_re, dec_vars.residual);
    std::vector<Tensor> unc_re = collect_gradients(g_re, dec_vars.uncertainty);
    std::vector<Tensor> enc_re;
    if (model_.encoder) enc_re = collect_gradients(g_re, enc_vars);

    if (l_adv_gen) {
      BackwardOptions opt;
      opt.targets = mix_vars.vars;
      opt.targets.insert(opt.targets.end(), dec_vars.uncertainty.vars.begin(), dec_vars.uncertainty.vars.end());
      GradientMap g_adv = backward(l_adv_gen, opt);
      std::vector<Tensor> mix_adv = collect_gradients(g_adv, mix_vars);
      std::vector<Tensor> unc_adv = collect_gradients(g_adv, dec_vars.uncertainty);
      apply(model_.mixture.group, combine(mix_re, GroupLossTable::mixture.re, &mix_adv, GroupLossTable::mixture.adv),
            opt_.mixture, GroupLossTable::mixture);
      apply(model_.decoder.uncertainty,
            combine(unc_re, GroupLossTable::uncertainty.re, &unc_adv, GroupLossTable::uncertainty.adv),
            opt_.uncertainty, GroupLossTable::uncertainty);
    } else {
      // without the critic the adversarial share falls back to the reconstruction loss
      apply(model_.mixture.group, combine(mix_re, GroupLossTable::mixture.re, nullptr, 0.0), opt_.mixture,
            GroupLossTable::mixture);
      apply(model_.decoder.uncertainty, combine(unc_re, GroupLossTable::uncertainty.adv, nullptr, 0.0),
            opt_.uncertainty, GroupLossTable::uncertainty);
    }
    if (model_.encoder)
      apply(model_.encoder->group, combine(enc_re, GroupLossTable::encoder.re, nullptr, 0.0), opt_.encoder,
            GroupLossTable::encoder);
    apply(model_.decoder.residual, combine(res_re, GroupLossTable::residual.re, nullptr, 0.0), opt_.residual,
          GroupLossTable::residual);

    if (!std::isfinite(row.reconstruction) || !std::isfinite(row.adversarial) || !std::isfinite(row.penalty))
      throw NumericError("loss became non-finite at iteration " + std::to_string(iteration));
    return row;
  }

 private:
  void apply(ParameterGroup& group, const std::vector<Tensor>& grads, AdamState& state, GroupCoefficients c) {
    AdamConfig scaled = adam_;
    scaled.learning_rate *= step_scale(c);
    adam_step(group, grads, state, scaled);
  }

  const TrainConfig& cfg_;
  UnmixModel& model_;
  Optimizers opt_;
  AdamConfig adam_;
  BatchStream stream_;
  Rng eta_rng_;
  Rng u_rng_;
};

}  // namespace

TrainResult train(const PixelSet& pixels, const EndmemberMatrix& endmembers, const TrainConfig& config,
                  const RunOptions& options) {
  config.validate();
  if (pixels.size() < config.batch_size)
    throw ConfigError("pixel set has " + std::to_string(pixels.size()) + " spectra, fewer than the batch size " +
                      std::to_string(config.batch_size));
  const std::size_t bands = pixels.raw.dim(1);

  TrainResult result;
  result.model = UnmixModel::init(config.model_config(bands), endmembers, derive_seed(config.seed, 10));

  std::ofstream history;
  if (!options.run_dir.empty()) {
    std::filesystem::create_directories(options.run_dir);
    std::ofstream(options.run_dir / "config.json") << to_json(config);
    history.open(options.run_dir / "history.csv", std::ios::trunc);
    if (!history) throw Error("cannot write " + (options.run_dir / "history.csv").string());
    history << kHistoryHeader << '\n';
  }

  UnmixModel snapshot = result.model;
  std::size_t snapshot_iteration = 0;
  Trainer trainer(pixels, config, result.model);
  result.history.reserve(config.iterations);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    HistoryRow row;
    try {
      row = trainer.step(it);
    } catch (const NumericError& e) {
      result.diverged = true;
      result.message = e.what();
      result.model = std::move(snapshot);
      result.checkpoint_iteration = snapshot_iteration;
      return result;
    }
    result.history.push_back(row);
    if (history) history << format_history_row(row) << '\n';
    if (options.on_iteration) options.on_iteration(row);
    if (it % config.checkpoint_every == 0 || it == config.iterations) {
      snapshot = result.model;
      snapshot_iteration = it;
      if (!options.run_dir.empty()) {
        history.flush();
        save_checkpoint(result.model, it, options.run_dir / ("checkpoint_" + std::to_string(it) + ".bin"));
      }
    }
  }
  result.checkpoint_iteration = config.iterations;
  return result;
}

}  // namespace specmix
