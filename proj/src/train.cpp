#include "personarl/train.hpp"

#include "personarl/checkpoint.hpp"
#include "personarl/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace personarl {

using nlohmann::json;

// --- Ablation names -------------------------------------------------------------

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_consist: return "no_consist";
    case Ablation::no_diverse: return "no_diverse";
    case Ablation::concat: return "concat";
  }
  throw StateError("ablation_name: unknown ablation");
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "full") return Ablation::full;
  if (name == "no_consist") return Ablation::no_consist;
  if (name == "no_diverse") return Ablation::no_diverse;
  if (name == "concat") return Ablation::concat;
  throw ConfigError("unknown ablation '" + name + "'");
}

// --- Config ----------------------------------------------------------------------

void TrainConfig::validate() const {
  env.validate();
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ConfigError("TrainConfig: lambda1 and lambda2 must be >= 0");
  }
  if (!(temperature > 0.0)) throw ConfigError("TrainConfig: temperature must be > 0");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw ConfigError("TrainConfig: clip_eps must be in (0, 1)");
  }
  if (batch_steps <= 0) throw ConfigError("TrainConfig: batch_steps must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("TrainConfig: gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw ConfigError("TrainConfig: gae_lambda must be in [0, 1]");
  }
  if (ppo_epochs < 1) throw ConfigError("TrainConfig: ppo_epochs must be >= 1");
  if (minibatch_size < 1 || minibatch_size > batch_steps) {
    throw ConfigError("TrainConfig: minibatch_size must be in [1, batch_steps]");
  }
  if (batch_steps % minibatch_size != 0) {
    throw ConfigError("TrainConfig: batch_steps must be a multiple of minibatch_size");
  }
  const int steps_per_episode = env.episode_length * env.n_agents;
  if (batch_steps % steps_per_episode != 0) {
    throw ConfigError(
        "TrainConfig: batch_steps must be a multiple of episode_length * n_agents");
  }
  if (!(lr_nets > 0.0) || !(lr_encoder > 0.0) || !(lr_projection > 0.0)) {
    throw ConfigError("TrainConfig: learning rates must be > 0");
  }
  if (!(value_coef >= 0.0) || !(entropy_coef >= 0.0)) {
    throw ConfigError("TrainConfig: value_coef and entropy_coef must be >= 0");
  }
  if (diversity_personas < 2) throw ConfigError("TrainConfig: diversity_personas must be >= 2");
  if (diversity_states < 1) throw ConfigError("TrainConfig: diversity_states must be >= 1");
  if (diversity_states > batch_steps) {
    throw ConfigError("TrainConfig: diversity_states cannot exceed batch_steps");
  }
  if (contrastive_cap < 2) throw ConfigError("TrainConfig: contrastive_cap must be >= 2");
}

std::string TrainConfig::to_json() const {
  json j;
  j["env"] = {{"grid_w", env.grid_w},
              {"grid_h", env.grid_h},
              {"n_agents", env.n_agents},
              {"episode_length", env.episode_length},
              {"ontology_version", env.ontology.version},
              {"needs_init_lo", env.needs_init_lo},
              {"needs_init_hi", env.needs_init_hi},
              {"rewards",
               {{"decay", env.rewards.decay},
                {"preferred_bonus", env.rewards.preferred_bonus},
                {"social_base", env.rewards.social_base},
                {"social_scale", env.rewards.social_scale},
                {"style_coef", env.rewards.style_coef}}}};
  j["cond_mode"] = cond_mode_name(cond_mode);
  j["ablation"] = ablation_name(ablation);
  j["gamma"] = gamma;
  j["gae_lambda"] = gae_lambda;
  j["clip_eps"] = clip_eps;
  j["value_coef"] = value_coef;
  j["entropy_coef"] = entropy_coef;
  j["ppo_epochs"] = ppo_epochs;
  j["minibatch_size"] = minibatch_size;
  j["batch_steps"] = batch_steps;
  j["lr_nets"] = lr_nets;
  j["lr_encoder"] = lr_encoder;
  j["lr_projection"] = lr_projection;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["temperature"] = temperature;
  j["diversity_personas"] = diversity_personas;
  j["diversity_states"] = diversity_states;
  j["contrastive_cap"] = contrastive_cap;
  j["projection_consist_only"] = projection_consist_only;
  j["seed"] = seed;
  return j.dump();
}

std::string IterationMetrics::to_json() const {
  json j;
  j["iteration"] = iteration;
  j["mean_return"] = mean_return;
  j["ppo_loss"] = ppo_loss;
  j["policy_loss"] = policy_loss;
  j["value_loss"] = value_loss;
  j["entropy"] = entropy;
  j["clip_frac"] = clip_frac;
  j["consist_loss"] = consist_loss;
  j["diverse_loss"] = diverse_loss;
  j["total_loss"] = total_loss;
  j["grad_norm"] = grad_norm;
  return j.dump();
}

// --- Trainer -----------------------------------------------------------------------

namespace {

// dst += src over identically shaped parameter bundles.
template <class P>
void add_into(P& dst, const P& src) {
  auto ds = detail::spans(dst);
  auto ss = detail::spans(src);
  if (ds.size() != ss.size()) throw StateError("add_into: layout mismatch");
  for (size_t i = 0; i < ds.size(); ++i) {
    if (ds[i].size != ss[i].size) throw StateError("add_into: tensor shape mismatch");
    Eigen::Map<Eigen::ArrayXd>(ds[i].data, ds[i].size) +=
        Eigen::Map<const Eigen::ArrayXd>(ss[i].data, ss[i].size);
  }
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const PersonaCorpus& corpus, const RawEmbeddingSet& raws,
                 const std::vector<int>& train_ids)
    : cfg_(cfg),
      corpus_(corpus),
      raws_(raws),
      train_ids_(train_ids),
      model_(init_agent(cfg.env, raws.dim, cfg.effective_mode(), cfg.seed)),
      policy_adam_(make_adam_state(model_.policy)),
      value_adam_(make_adam_state(model_.value)),
      encoder_adam_(make_adam_state(model_.encoder)),
      projection_adam_(make_adam_state(model_.projection)),
      rng_(mix_seed(cfg.seed, 0x7247)) {
  cfg_.validate();
  if (train_ids_.empty()) throw ConfigError("Trainer: empty train split");
  std::sort(train_ids_.begin(), train_ids_.end());
  if (std::adjacent_find(train_ids_.begin(), train_ids_.end()) != train_ids_.end()) {
    throw ConfigError("Trainer: duplicate persona ids in the train split");
  }
  if (static_cast<int>(train_ids_.size()) < cfg_.env.n_agents) {
    throw ConfigError("Trainer: train split smaller than the per-episode persona need");
  }
  if (cfg_.ablation != Ablation::no_diverse &&
      static_cast<int>(train_ids_.size()) < cfg_.diversity_personas) {
    throw ConfigError("Trainer: train split smaller than diversity_personas");
  }
  for (int id : train_ids_) {
    corpus_.by_id(id);  // throws if missing
    raws_.at(id);
  }
}

Trainer::Batch Trainer::collect_batch() {
  const int n_episodes = cfg_.episodes_per_iter();
  const int n_agents = cfg_.env.n_agents;
  const int t_len = cfg_.env.episode_length;
  const int b = cfg_.batch_steps;

  // Personas per episode: distinct draws from the train split.
  std::vector<std::vector<int>> personas(static_cast<size_t>(n_episodes));
  for (auto& ids : personas) {
    std::vector<int> pick =
        rng_.sample_without_replacement(static_cast<int>(train_ids_.size()), n_agents);
    for (int k : pick) ids.push_back(train_ids_[static_cast<size_t>(k)]);
  }
  const uint64_t rollout_seed = rng_.next_u64();
  ActorFn actor = make_actor(model_, raws_);
  auto episodes =
      rollout_episodes(cfg_.env, corpus_, personas, actor, rollout_seed, /*want_values=*/true);

  Batch batch;
  batch.obs.resize(observation_dim(cfg_.env), b);
  batch.actions.resize(static_cast<size_t>(b));
  batch.persona_ids.resize(static_cast<size_t>(b));
  batch.old_logp.resize(b);
  batch.advantages.resize(b);
  batch.returns.resize(b);

  int col = 0;
  double return_sum = 0.0;
  std::set<int> contrastive_seen;
  for (const auto& ep : episodes) {
    for (const auto& traj : ep) {
      return_sum += traj.episode_return();
      // Terminal episodes: bootstrap value 0 beyond the final step.
      Vec values_tp1(t_len + 1);
      values_tp1.head(t_len) = traj.values;
      values_tp1[t_len] = 0.0;
      Vec adv = compute_gae(traj.rewards, values_tp1, /*terminal=*/true, cfg_.gamma,
                            cfg_.gae_lambda);
      Vec ret = adv + traj.values;
      for (int t = 0; t < t_len; ++t, ++col) {
        batch.obs.col(col) = traj.observations.col(t);
        const int a = traj.actions[static_cast<size_t>(t)];
        batch.actions[static_cast<size_t>(col)] = a;
        batch.persona_ids[static_cast<size_t>(col)] = traj.persona_id;
        batch.old_logp[col] = std::log(traj.action_probs(a, t));
        batch.advantages[col] = adv[t];
        batch.returns[col] = ret[t];
      }
      if (static_cast<int>(batch.contrastive_personas.size()) < cfg_.contrastive_cap &&
          contrastive_seen.insert(traj.persona_id).second) {
        batch.contrastive_actions.push_back(traj.actions);
        batch.contrastive_personas.push_back(traj.persona_id);
      }
    }
  }
  if (col != b) throw StateError("Trainer: batch assembly mismatch");
  batch.mean_return = return_sum / static_cast<double>(n_episodes * n_agents);

  // Normalize advantages once per batch (zero mean, unit variance).
  const double mean = batch.advantages.mean();
  const double var = (batch.advantages.array() - mean).square().mean();
  const double std = std::sqrt(var);
  batch.advantages = (batch.advantages.array() - mean) / std::max(std, 1e-8);
  return batch;
}

IterationMetrics Trainer::run_iteration() {
  try {
    return run_iteration_impl();
  } catch (const NumericalError&) {
    if (!diagnostic_path.empty()) save_checkpoint(diagnostic_path);
    throw;
  }
}

IterationMetrics Trainer::run_iteration_impl() {
  Batch batch = collect_batch();
  const int b = cfg_.batch_steps;
  const int mb_size = cfg_.minibatch_size;
  const int n_minibatches = b / mb_size;

  const bool consist_on = cfg_.ablation != Ablation::no_consist &&
                          batch.contrastive_personas.size() >= 2;
  const bool diverse_on = cfg_.ablation != Ablation::no_diverse;

  double consist_sum = 0.0, diverse_sum = 0.0;
  double ppo_sum = 0.0, policy_sum = 0.0, value_sum = 0.0, entropy_sum = 0.0, clip_sum = 0.0;
  double grad_norm_sum = 0.0;
  int opt_steps = 0;

  // Auxiliary passes: each accumulates lambda-weighted gradients into `g` and
  // returns the unweighted loss. The consistency pass touches only the
  // encoder and projection, so it runs at every minibatch step (the encoder's
  // sole gradient source gets the full update budget); the diversity pass
  // feeds the policy and runs once per epoch so task-reward and diversity
  // pressure keep the same balance as the logged objective.
  auto consist_pass = [&](AgentModel& g) -> double {
    EncoderCache enc_cache;
    Mat codes = encode_actions(model_.encoder, batch.contrastive_actions, &enc_cache);
    const int k = static_cast<int>(batch.contrastive_personas.size());
    Mat embeds(kEmbedDim, k);
    std::vector<ProjectionCache> pcaches(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      embeds.col(i) = project(model_.projection,
                              raws_.at(batch.contrastive_personas[static_cast<size_t>(i)]),
                              &pcaches[static_cast<size_t>(i)]);
    }
    Mat d_codes, d_embeds;
    double loss = infonce_loss(codes, embeds, cfg_.temperature, &d_codes, &d_embeds,
                               &batch.contrastive_personas);
    encoder_backward(model_.encoder, enc_cache, Mat(cfg_.lambda1 * d_codes), g.encoder);
    for (int i = 0; i < k; ++i) {
      projection_backward(model_.projection, pcaches[static_cast<size_t>(i)],
                          Vec(cfg_.lambda1 * d_embeds.col(i)), g.projection);
    }
    return loss;
  };

  auto diverse_pass = [&](AgentModel& g) -> double {
    // n distinct personas at shared probe states from the current rollout.
    std::vector<int> pick = rng_.sample_without_replacement(
        static_cast<int>(train_ids_.size()), cfg_.diversity_personas);
    std::vector<int> state_pick = rng_.sample_without_replacement(b, cfg_.diversity_states);
    Mat states(batch.obs.rows(), cfg_.diversity_states);
    for (int s = 0; s < cfg_.diversity_states; ++s) {
      states.col(s) = batch.obs.col(state_pick[static_cast<size_t>(s)]);
    }
    const int np = cfg_.diversity_personas;
    std::vector<ProjectionCache> pcaches(static_cast<size_t>(np));
    std::vector<MlpCache> mcaches(static_cast<size_t>(np));
    std::vector<Mat> probs(static_cast<size_t>(np));
    for (int p = 0; p < np; ++p) {
      const int pid = train_ids_[static_cast<size_t>(pick[static_cast<size_t>(p)])];
      Vec e = project(model_.projection, raws_.at(pid), &pcaches[static_cast<size_t>(p)]);
      Mat tiled(kEmbedDim, cfg_.diversity_states);
      tiled.colwise() = e;
      probs[static_cast<size_t>(p)] = softmax_columns(
          mlp_forward(model_.policy, states, tiled, &mcaches[static_cast<size_t>(p)]));
    }
    std::vector<Mat> d_logits;
    double loss = kl_diversity_from_probs(probs, &d_logits);
    for (int p = 0; p < np; ++p) {
      Mat d_embeds = Mat::Zero(kEmbedDim, cfg_.diversity_states);
      mlp_backward(model_.policy, mcaches[static_cast<size_t>(p)],
                   Mat(cfg_.lambda2 * d_logits[static_cast<size_t>(p)]), g.policy, &d_embeds);
      if (!cfg_.projection_consist_only) {
        projection_backward(model_.projection, pcaches[static_cast<size_t>(p)],
                            Vec(d_embeds.rowwise().sum()), g.projection);
      }
    }
    return loss;
  };

  for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    AgentModel diverse_grads = zeros_like(model_);
    if (diverse_on) diverse_sum += diverse_pass(diverse_grads);

    std::vector<int> perm = rng_.permutation(b);
    for (int mb = 0; mb < n_minibatches; ++mb) {
      Mat obs(batch.obs.rows(), mb_size);
      std::vector<int> actions(static_cast<size_t>(mb_size));
      std::vector<int> pids(static_cast<size_t>(mb_size));
      Vec old_logp(mb_size), adv(mb_size), ret(mb_size);
      for (int i = 0; i < mb_size; ++i) {
        const int src = perm[static_cast<size_t>(mb * mb_size + i)];
        obs.col(i) = batch.obs.col(src);
        actions[static_cast<size_t>(i)] = batch.actions[static_cast<size_t>(src)];
        pids[static_cast<size_t>(i)] = batch.persona_ids[static_cast<size_t>(src)];
        old_logp[i] = batch.old_logp[src];
        adv[i] = batch.advantages[src];
        ret[i] = batch.returns[src];
      }

      // Fresh projections for the minibatch's personas (end-to-end path).
      std::map<int, ProjectionCache> pcaches;
      std::map<int, Vec> conds;
      for (int pid : pids) {
        if (conds.count(pid) == 0) {
          ProjectionCache cache;
          conds[pid] = project(model_.projection, raws_.at(pid), &cache);
          pcaches[pid] = cache;
        }
      }
      Mat embeds(kEmbedDim, mb_size);
      for (int i = 0; i < mb_size; ++i) embeds.col(i) = conds.at(pids[static_cast<size_t>(i)]);

      MlpCache policy_cache, value_cache;
      Mat logits = mlp_forward(model_.policy, obs, embeds, &policy_cache);
      Mat v_row = mlp_forward(model_.value, obs, embeds, &value_cache);
      Vec v_pred = v_row.row(0).transpose();

      Mat d_logits;
      Vec d_v;
      PpoStats st = ppo_loss_and_grad(logits, actions, old_logp, adv, v_pred, ret, cfg_.clip_eps,
                                      cfg_.value_coef, cfg_.entropy_coef, &d_logits, &d_v);
      ppo_sum += st.loss;
      policy_sum += st.policy_loss;
      value_sum += st.value_loss;
      entropy_sum += st.entropy;
      clip_sum += st.clip_frac;

      AgentModel grads = zeros_like(model_);
      Mat de_policy = Mat::Zero(kEmbedDim, mb_size);
      Mat de_value = Mat::Zero(kEmbedDim, mb_size);
      mlp_backward(model_.policy, policy_cache, d_logits, grads.policy, &de_policy);
      Mat d_v_row(1, mb_size);
      d_v_row.row(0) = d_v.transpose();
      mlp_backward(model_.value, value_cache, d_v_row, grads.value, &de_value);

      if (!cfg_.projection_consist_only) {
        std::map<int, Vec> de_sum;
        for (int i = 0; i < mb_size; ++i) {
          const int pid = pids[static_cast<size_t>(i)];
          auto it = de_sum.find(pid);
          if (it == de_sum.end()) {
            de_sum[pid] = Vec(de_policy.col(i) + de_value.col(i));
          } else {
            it->second += de_policy.col(i) + de_value.col(i);
          }
        }
        for (const auto& [pid, de] : de_sum) {
          projection_backward(model_.projection, pcaches.at(pid), de, grads.projection);
        }
      }

      if (consist_on) consist_sum += consist_pass(grads);
      if (diverse_on && mb == 0) add_into(grads, diverse_grads);

      grad_norm_sum += global_norm(grads);
      ++opt_steps;

      adam_step(model_.policy, grads.policy, policy_adam_, cfg_.lr_nets);
      adam_step(model_.value, grads.value, value_adam_, cfg_.lr_nets);
      if (consist_on) {
        adam_step(model_.encoder, grads.encoder, encoder_adam_, cfg_.lr_encoder);
      }
      const bool projection_active = !cfg_.projection_consist_only || consist_on;
      if (projection_active) {
        adam_step(model_.projection, grads.projection, projection_adam_, cfg_.lr_projection);
      }
    }
  }

  IterationMetrics m;
  m.iteration = iteration_;
  m.mean_return = batch.mean_return;
  m.ppo_loss = ppo_sum / opt_steps;
  m.policy_loss = policy_sum / opt_steps;
  m.value_loss = value_sum / opt_steps;
  m.entropy = entropy_sum / opt_steps;
  m.clip_frac = clip_sum / opt_steps;
  m.consist_loss = consist_on ? consist_sum / opt_steps : 0.0;
  m.diverse_loss = diverse_on ? diverse_sum / cfg_.ppo_epochs : 0.0;
  m.total_loss = m.ppo_loss + cfg_.lambda1 * m.consist_loss + cfg_.lambda2 * m.diverse_loss;
  m.grad_norm = grad_norm_sum / opt_steps;
  ++iteration_;

  if (!std::isfinite(m.total_loss) || !std::isfinite(m.grad_norm) ||
      !std::isfinite(m.mean_return)) {
    throw NumericalError("Trainer: non-finite loss at iteration " + std::to_string(m.iteration));
  }
  return m;
}

// --- Checkpointing --------------------------------------------------------------------

void Trainer::save_checkpoint(const std::string& path) const {
  CheckpointWriter w;
  json meta;
  meta["format"] = 1;
  meta["iteration"] = iteration_;
  meta["adam_t"] = {{"policy", policy_adam_.t},
                    {"value", value_adam_.t},
                    {"encoder", encoder_adam_.t},
                    {"projection", projection_adam_.t}};
  w.add_string("meta", meta.dump());
  w.add_string("config", cfg_.to_json());
  w.add_string("rng", rng_.save_state());
  w.add_params("params", model_);
  w.add_params("adam_m", policy_adam_.m);
  w.add_params("adam_m", value_adam_.m);
  w.add_params("adam_m", encoder_adam_.m);
  w.add_params("adam_m", projection_adam_.m);
  w.add_params("adam_v", policy_adam_.v);
  w.add_params("adam_v", value_adam_.v);
  w.add_params("adam_v", encoder_adam_.v);
  w.add_params("adam_v", projection_adam_.v);
  w.write(path);
}

void Trainer::load_checkpoint(const std::string& path) {
  CheckpointReader r(path);
  if (r.get_string("config") != cfg_.to_json()) {
    throw ConfigError("Trainer::load_checkpoint: checkpoint was written under a different config");
  }
  json meta = json::parse(r.get_string("meta"));
  iteration_ = meta.at("iteration").get<int>();
  policy_adam_.t = meta.at("adam_t").at("policy").get<int64_t>();
  value_adam_.t = meta.at("adam_t").at("value").get<int64_t>();
  encoder_adam_.t = meta.at("adam_t").at("encoder").get<int64_t>();
  projection_adam_.t = meta.at("adam_t").at("projection").get<int64_t>();
  rng_.load_state(r.get_string("rng"));
  r.load_params("params", model_);
  r.load_params("adam_m", policy_adam_.m);
  r.load_params("adam_m", value_adam_.m);
  r.load_params("adam_m", encoder_adam_.m);
  r.load_params("adam_m", projection_adam_.m);
  r.load_params("adam_v", policy_adam_.v);
  r.load_params("adam_v", value_adam_.v);
  r.load_params("adam_v", encoder_adam_.v);
  r.load_params("adam_v", projection_adam_.v);
}

}  // namespace personarl
