#pragma once

// Multi-agent needs-driven gridworld.
//
// Agents move on a small grid and satisfy eight decaying needs. Rewards per
// step decompose into:
//   r_needs     gain * (1 - need level before the action) for activities
//   r_preferred +0.5 when the chosen action is in the persona's preferred set
//   r_social    0.2 + 0.3 * cos(bf_i, bf_j) for both agents of a pair within
//               Chebyshev radius 1 that both chose a social-targeting activity
//   r_style     0.3 * cos(bf, style(action)) for activities (v3 ontology only)
// Movement carries no intrinsic reward. Episodes run a fixed 128 steps;
// agents act simultaneously per step, applied in fixed agent order.

#include "personarl/common.hpp"
#include "personarl/ontology.hpp"
#include "personarl/persona.hpp"

#include <functional>
#include <string>
#include <vector>

namespace personarl {

struct RewardWeights {
  double decay = 0.01;            // per-need decay per step
  double preferred_bonus = 0.5;
  double social_base = 0.2;
  double social_scale = 0.3;
  double style_coef = 0.3;        // applied for v3 ontologies only
};

struct EnvConfig {
  int grid_w = 6;
  int grid_h = 6;
  int n_agents = 4;
  int episode_length = 128;
  ActionOntology ontology = ActionOntology::v1();
  RewardWeights rewards;
  double needs_init_lo = 0.4;
  double needs_init_hi = 0.8;

  void validate() const;
  bool style_reward_active() const { return ontology.version == 3; }
};

// Observation layout (all entries in [-1, 1]):
//   v1: pos(2, x/(w-1), y/(h-1)) | time(1, step/len) | needs(8)
//       | per other agent: dx/w, dy/h, last_action/|A|   (3 * (N-1))
//   v3 appends: affordance one-hot of the current cell (8)
//       | social context: neighbors<=1 / (N-1), mean bf-cosine with those
//         neighbors, same-cell flag (3)
//       | routine: fraction of last 8 actions equal to their mode,
//         min(steps since action change, 8) / 8 (2)
int observation_dim(const EnvConfig& cfg);

struct AgentState {
  int x = 0, y = 0;
  Vec needs;                      // kNeedCount entries in [0, 1]
  int persona_id = -1;
  TraitVec big_five;
  std::vector<int> preferred_actions;
  int last_action = -1;           // -1 before the first step
  std::vector<int> recent_actions;  // ring of up to 8 most recent actions
  int steps_since_change = 0;
};

struct EnvState {
  int step_index = 0;
  std::vector<AgentState> agents;
  std::vector<int> affordance;    // grid_w*grid_h cell -> need zone (v3)
  std::string rng_state;          // serialized reset RNG (reproducibility)
};

EnvState env_reset(const EnvConfig& cfg, const PersonaCorpus& corpus,
                   const std::vector<int>& persona_ids, uint64_t seed);

Vec observe(const EnvConfig& cfg, const EnvState& state, int agent_idx);

struct StepRewards {
  double needs = 0, preferred = 0, social = 0, style = 0;
  double total() const { return needs + preferred + social + style; }
};

// Applies one joint action; returns per-agent reward decompositions and sets
// *done when the episode has reached its fixed length.
std::vector<StepRewards> env_step(const EnvConfig& cfg, EnvState& state,
                                  const std::vector<int>& actions, bool* done);

// --- Rollouts ----------------------------------------------------------------

struct Trajectory {
  int persona_id = -1;
  std::vector<int> actions;
  Mat observations;               // obs_dim x T
  Mat action_probs;               // |A| x T
  Vec rewards;                    // total reward per step
  std::vector<StepRewards> components;
  Vec values;                     // value estimates (zero when not requested)
  double episode_return() const { return rewards.sum(); }
};

// Batched actor over concatenated per-agent observation columns. persona_ids
// aligns with columns; values may be null when no critic is needed.
using ActorFn = std::function<void(const Mat& obs, const std::vector<int>& persona_ids,
                                   Mat& probs, Vec* values)>;

// Runs E episodes in lockstep so the actor sees one batched call per step.
// Actions are sampled from the actor's distributions (inverse-CDF draw from a
// per-episode RNG); with greedy=true the argmax action is taken instead.
std::vector<std::vector<Trajectory>> rollout_episodes(
    const EnvConfig& cfg, const PersonaCorpus& corpus,
    const std::vector<std::vector<int>>& personas_per_episode, const ActorFn& actor,
    uint64_t seed, bool want_values, bool greedy = false);

// Convenience single-episode wrapper.
std::vector<Trajectory> rollout(const EnvConfig& cfg, const PersonaCorpus& corpus,
                                const std::vector<int>& personas, const ActorFn& actor,
                                uint64_t seed, bool want_values, bool greedy = false);

// Structured-text trajectory dump (JSON lines, one record per agent-step).
void dump_trajectories_jsonl(const std::vector<Trajectory>& trajs, const std::string& path);

}  // namespace personarl
