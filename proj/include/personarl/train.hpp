#pragma once

// Co-training loop: PPO with GAE over rollouts of the conditioned policy,
// plus the trajectory-consistency (InfoNCE) and persona-diversity (negative
// pairwise KL) terms,
//
//   L = L_ppo + lambda1 * L_consist + lambda2 * L_diverse,
//
// with ablation switches that remove either auxiliary term or swap FiLM
// conditioning for input concatenation. Single-threaded and bit-reproducible
// for a given (config, seed).

#include "personarl/adam.hpp"
#include "personarl/agent.hpp"

#include <string>
#include <vector>

namespace personarl {

enum class Ablation { full, no_consist, no_diverse, concat };
const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct TrainConfig {
  EnvConfig env;
  CondMode cond_mode = CondMode::film;
  Ablation ablation = Ablation::full;

  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int ppo_epochs = 4;
  int minibatch_size = 256;
  int batch_steps = 2048;

  double lr_nets = 3e-4;        // policy, value
  double lr_encoder = 1e-3;     // trajectory encoder (consistency gradients only;
                                // higher rate so codes escape the init attractor)
  double lr_projection = 1e-4;  // low-rank projection

  double lambda1 = 0.5;      // consistency weight
  double lambda2 = 0.1;      // diversity weight
  double temperature = 0.07; // InfoNCE temperature
  int diversity_personas = 8;
  int diversity_states = 32;
  int contrastive_cap = 64;  // max trajectories per contrastive batch
  // When set, the projection receives gradients only from the consistency
  // loss (default: end-to-end, PPO and diversity terms included).
  bool projection_consist_only = false;

  uint64_t seed = 0;

  CondMode effective_mode() const {
    return ablation == Ablation::concat ? CondMode::concat : cond_mode;
  }
  // Episodes collected per iteration; batch_steps must tile exactly.
  int episodes_per_iter() const {
    return batch_steps / (env.episode_length * env.n_agents);
  }
  void validate() const;
  std::string to_json() const;  // canonical dump (manifest + checkpoint guard)
};

struct IterationMetrics {
  int iteration = 0;
  double mean_return = 0;   // mean episode return over the iteration's rollouts
  double ppo_loss = 0;      // mean over optimizer steps
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_frac = 0;
  double consist_loss = 0;  // mean over epochs; identically 0 under no_consist
  double diverse_loss = 0;  // mean over epochs; identically 0 under no_diverse
  double total_loss = 0;    // ppo + lambda1*consist + lambda2*diverse, exactly
  double grad_norm = 0;     // mean combined gradient norm over optimizer steps

  std::string to_json() const;  // single JSONL record
};

class Trainer {
 public:
  // train_ids: persona ids available for rollouts (the train split). The
  // corpus and embedding set are copied so the trainer is self-contained.
  Trainer(const TrainConfig& cfg, const PersonaCorpus& corpus, const RawEmbeddingSet& raws,
          const std::vector<int>& train_ids);

  // One full iteration: collect batch_steps transitions, run ppo_epochs of
  // minibatch updates — every update steps on the full objective (PPO plus
  // the lambda-weighted consistency and diversity terms, honoring ablation
  // switches) — and return the metrics. Throws NumericalError on a non-finite
  // loss after writing a diagnostic checkpoint to diagnostic_path (when set).
  IterationMetrics run_iteration();

  const AgentModel& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }

  // Checkpoints capture parameters, optimizer moments, the trainer RNG and
  // the iteration counter; a resumed run continues bit-identically. Loading
  // rejects checkpoints written under a different config.
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  std::string diagnostic_path;  // optional crash-dump location

 private:
  struct Batch {
    Mat obs;
    std::vector<int> actions;
    std::vector<int> persona_ids;
    Vec old_logp, advantages, returns;
    std::vector<std::vector<int>> contrastive_actions;  // deduped by persona
    std::vector<int> contrastive_personas;
    double mean_return = 0;
  };
  Batch collect_batch();
  IterationMetrics run_iteration_impl();

  TrainConfig cfg_;
  PersonaCorpus corpus_;
  RawEmbeddingSet raws_;
  std::vector<int> train_ids_;
  AgentModel model_;
  AdamState<MlpParams> policy_adam_, value_adam_;
  AdamState<EncoderParams> encoder_adam_;
  AdamState<ProjectionParams> projection_adam_;
  Rng rng_;
  int iteration_ = 0;
};

}  // namespace personarl
