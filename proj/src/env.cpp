#include "personarl/env.hpp"

#include <json.hpp>

#include <algorithm>
#include <deque>
#include <fstream>

namespace personarl {

void EnvConfig::validate() const {
  if (grid_w < 2 || grid_h < 2) throw ConfigError("env: grid must be at least 2x2");
  if (n_agents < 1) throw ConfigError("env: n_agents must be positive");
  if (n_agents > grid_w * grid_h) throw ConfigError("env: more agents than cells");
  if (episode_length < 1) throw ConfigError("env: episode_length must be positive");
  if (!(needs_init_lo >= 0.0 && needs_init_hi <= 1.0 && needs_init_lo <= needs_init_hi))
    throw ConfigError("env: needs init range must satisfy 0 <= lo <= hi <= 1");
  ontology.validate();
  if (ontology.version == 3 && grid_w * grid_h < kNeedCount)
    throw ConfigError("env: v3 affordance zones need at least 8 cells");
}

int observation_dim(const EnvConfig& cfg) {
  int d = 2 + 1 + kNeedCount + 3 * (cfg.n_agents - 1);
  if (cfg.ontology.version == 3) d += kNeedCount + 3 + 2;
  return d;
}

// --- Reset -------------------------------------------------------------------

// Multi-source 4-neighbour BFS from one seeded cell per need; FIFO expansion
// hands out cells round-robin so zones end up contiguous and similar-sized.
static std::vector<int> build_affordance_map(int w, int h, const std::vector<int>& seeds) {
  std::vector<int> zone(static_cast<size_t>(w) * h, -1);
  std::deque<int> frontier;
  for (int k = 0; k < static_cast<int>(seeds.size()); ++k) {
    zone[seeds[k]] = k;
    frontier.push_back(seeds[k]);
  }
  const int dx[4] = {+1, -1, 0, 0};
  const int dy[4] = {0, 0, +1, -1};
  while (!frontier.empty()) {
    int cell = frontier.front();
    frontier.pop_front();
    int cx = cell % w, cy = cell / w;
    for (int d = 0; d < 4; ++d) {
      int nx = cx + dx[d], ny = cy + dy[d];
      if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
      int ncell = ny * w + nx;
      if (zone[ncell] < 0) {
        zone[ncell] = zone[cell];
        frontier.push_back(ncell);
      }
    }
  }
  return zone;
}

EnvState env_reset(const EnvConfig& cfg, const PersonaCorpus& corpus,
                   const std::vector<int>& persona_ids, uint64_t seed) {
  cfg.validate();
  if (static_cast<int>(persona_ids.size()) != cfg.n_agents)
    throw ConfigError("env_reset: persona_ids size must equal n_agents");

  Rng rng(seed);
  EnvState s;
  s.step_index = 0;
  s.agents.resize(cfg.n_agents);

  std::vector<int> cells = rng.sample_without_replacement(cfg.grid_w * cfg.grid_h, cfg.n_agents);
  for (int i = 0; i < cfg.n_agents; ++i) {
    AgentState& a = s.agents[i];
    a.x = cells[i] % cfg.grid_w;
    a.y = cells[i] / cfg.grid_w;
    a.needs = Vec(kNeedCount);
    for (int k = 0; k < kNeedCount; ++k)
      a.needs[k] = cfg.needs_init_lo + (cfg.needs_init_hi - cfg.needs_init_lo) * rng.uniform();
    const PersonaRecord& p = corpus.by_id(persona_ids[i]);
    a.persona_id = p.persona_id;
    a.big_five = p.big_five;
    a.preferred_actions = p.preferred_actions;
    a.last_action = -1;
    a.recent_actions.clear();
    a.steps_since_change = 0;
  }

  if (cfg.ontology.version == 3) {
    std::vector<int> seeds = rng.sample_without_replacement(cfg.grid_w * cfg.grid_h, kNeedCount);
    s.affordance = build_affordance_map(cfg.grid_w, cfg.grid_h, seeds);
  }
  s.rng_state = rng.save_state();
  return s;
}

// --- Observation -------------------------------------------------------------

static int chebyshev(const AgentState& a, const AgentState& b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

Vec observe(const EnvConfig& cfg, const EnvState& state, int agent_idx) {
  const AgentState& me = state.agents[agent_idx];
  const int n_actions = cfg.ontology.action_count();
  Vec obs(observation_dim(cfg));
  int at = 0;

  obs[at++] = static_cast<double>(me.x) / (cfg.grid_w - 1);
  obs[at++] = static_cast<double>(me.y) / (cfg.grid_h - 1);
  obs[at++] = static_cast<double>(state.step_index) / cfg.episode_length;
  for (int k = 0; k < kNeedCount; ++k) obs[at++] = me.needs[k];

  for (int j = 0; j < cfg.n_agents; ++j) {
    if (j == agent_idx) continue;
    const AgentState& other = state.agents[j];
    obs[at++] = static_cast<double>(other.x - me.x) / cfg.grid_w;
    obs[at++] = static_cast<double>(other.y - me.y) / cfg.grid_h;
    obs[at++] = static_cast<double>(other.last_action) / n_actions;
  }

  if (cfg.ontology.version == 3) {
    // Affordance zone of the current cell, one-hot over needs.
    int zone = state.affordance[static_cast<size_t>(me.y) * cfg.grid_w + me.x];
    for (int k = 0; k < kNeedCount; ++k) obs[at++] = (k == zone) ? 1.0 : 0.0;

    // Social context: neighbour density, mean trait cosine, shared-cell flag.
    int neighbours = 0, same_cell = 0;
    double cos_sum = 0.0;
    for (int j = 0; j < cfg.n_agents; ++j) {
      if (j == agent_idx) continue;
      const AgentState& other = state.agents[j];
      if (chebyshev(me, other) <= 1) {
        ++neighbours;
        cos_sum += cosine(me.big_five, other.big_five);
      }
      if (other.x == me.x && other.y == me.y) same_cell = 1;
    }
    obs[at++] = cfg.n_agents > 1 ? static_cast<double>(neighbours) / (cfg.n_agents - 1) : 0.0;
    obs[at++] = neighbours > 0 ? cos_sum / neighbours : 0.0;
    obs[at++] = same_cell;

    // Routine signals from the action history.
    double mode_frac = 0.0;
    if (!me.recent_actions.empty()) {
      int best = 0;
      for (int a : me.recent_actions) {
        int c = static_cast<int>(std::count(me.recent_actions.begin(), me.recent_actions.end(), a));
        if (c > best) best = c;
      }
      mode_frac = static_cast<double>(best) / me.recent_actions.size();
    }
    obs[at++] = mode_frac;
    obs[at++] = std::min(me.steps_since_change, 8) / 8.0;
  }

  if (at != obs.size()) throw StateError("observe: layout mismatch");
  return obs;
}

// --- Step --------------------------------------------------------------------

std::vector<StepRewards> env_step(const EnvConfig& cfg, EnvState& state,
                                  const std::vector<int>& actions, bool* done) {
  if (static_cast<int>(actions.size()) != cfg.n_agents)
    throw ConfigError("env_step: actions size must equal n_agents");
  if (state.step_index >= cfg.episode_length)
    throw StateError("env_step: episode already finished");
  const int n_actions = cfg.ontology.action_count();
  for (int a : actions)
    if (a < 0 || a >= n_actions) throw ConfigError("env_step: action id out of range");

  std::vector<StepRewards> rewards(cfg.n_agents);

  // Movement resolves first, in agent order, clipped at the borders.
  for (int i = 0; i < cfg.n_agents; ++i) {
    const ActionDescriptor& act = cfg.ontology.action(actions[i]);
    if (act.is_movement) {
      AgentState& a = state.agents[i];
      a.x = std::clamp(a.x + act.dx, 0, cfg.grid_w - 1);
      a.y = std::clamp(a.y + act.dy, 0, cfg.grid_h - 1);
    }
  }

  // Need gains and the individual reward terms (positions now post-movement).
  for (int i = 0; i < cfg.n_agents; ++i) {
    AgentState& a = state.agents[i];
    const ActionDescriptor& act = cfg.ontology.action(actions[i]);
    if (!act.is_movement) {
      double before = a.needs[act.target_need];
      double gained = act.gain * (1.0 - before);
      rewards[i].needs = gained;
      a.needs[act.target_need] = before + gained;
      if (cfg.style_reward_active())
        rewards[i].style = cfg.rewards.style_coef * cosine(a.big_five, act.style);
    }
    if (std::binary_search(a.preferred_actions.begin(), a.preferred_actions.end(), actions[i]))
      rewards[i].preferred = cfg.rewards.preferred_bonus;
  }

  // Social bonus per unordered pair of adjacent agents that both chose a
  // social-targeting activity; both sides receive it.
  for (int i = 0; i < cfg.n_agents; ++i) {
    const ActionDescriptor& ai = cfg.ontology.action(actions[i]);
    if (ai.is_movement || !ai.social_targeting) continue;
    for (int j = i + 1; j < cfg.n_agents; ++j) {
      const ActionDescriptor& aj = cfg.ontology.action(actions[j]);
      if (aj.is_movement || !aj.social_targeting) continue;
      if (chebyshev(state.agents[i], state.agents[j]) <= 1) {
        double bonus = cfg.rewards.social_base +
                       cfg.rewards.social_scale * cosine(state.agents[i].big_five, state.agents[j].big_five);
        rewards[i].social += bonus;
        rewards[j].social += bonus;
      }
    }
  }

  // Decay and clamp all needs, then advance the per-agent histories.
  for (int i = 0; i < cfg.n_agents; ++i) {
    AgentState& a = state.agents[i];
    for (int k = 0; k < kNeedCount; ++k)
      a.needs[k] = std::clamp(a.needs[k] - cfg.rewards.decay, 0.0, 1.0);
    a.steps_since_change = (actions[i] == a.last_action) ? a.steps_since_change + 1 : 0;
    a.last_action = actions[i];
    a.recent_actions.push_back(actions[i]);
    if (a.recent_actions.size() > 8) a.recent_actions.erase(a.recent_actions.begin());
  }

  ++state.step_index;
  if (done != nullptr) *done = state.step_index >= cfg.episode_length;
  return rewards;
}

// --- Rollouts ----------------------------------------------------------------

static int sample_from_column(const Mat& probs, int col, Rng& rng) {
  double u = rng.uniform(), cum = 0.0;
  for (int k = 0; k < probs.rows(); ++k) {
    cum += probs(k, col);
    if (u < cum) return k;
  }
  return static_cast<int>(probs.rows()) - 1;
}

static int argmax_column(const Mat& probs, int col) {
  int idx = 0;
  probs.col(col).maxCoeff(&idx);
  return idx;
}

std::vector<std::vector<Trajectory>> rollout_episodes(
    const EnvConfig& cfg, const PersonaCorpus& corpus,
    const std::vector<std::vector<int>>& personas_per_episode, const ActorFn& actor,
    uint64_t seed, bool want_values, bool greedy) {
  const int n_episodes = static_cast<int>(personas_per_episode.size());
  const int n_agents = cfg.n_agents;
  const int T = cfg.episode_length;
  const int obs_dim = observation_dim(cfg);
  const int n_actions = cfg.ontology.action_count();

  std::vector<EnvState> states;
  std::vector<Rng> samplers;
  std::vector<int> flat_personas;
  flat_personas.reserve(static_cast<size_t>(n_episodes) * n_agents);
  for (int e = 0; e < n_episodes; ++e) {
    states.push_back(env_reset(cfg, corpus, personas_per_episode[e], mix_seed(seed, e, 0)));
    samplers.emplace_back(mix_seed(seed, e, 1));
    for (int id : personas_per_episode[e]) flat_personas.push_back(id);
  }

  std::vector<std::vector<Trajectory>> out(n_episodes);
  for (int e = 0; e < n_episodes; ++e) {
    out[e].resize(n_agents);
    for (int i = 0; i < n_agents; ++i) {
      Trajectory& tr = out[e][i];
      tr.persona_id = personas_per_episode[e][i];
      tr.actions.resize(T);
      tr.observations.resize(obs_dim, T);
      tr.action_probs.resize(n_actions, T);
      tr.rewards = Vec::Zero(T);
      tr.components.resize(T);
      tr.values = Vec::Zero(T);
    }
  }

  Mat obs(obs_dim, n_episodes * n_agents);
  Mat probs(n_actions, n_episodes * n_agents);
  Vec values(n_episodes * n_agents);
  std::vector<int> actions(n_agents);

  for (int t = 0; t < T; ++t) {
    for (int e = 0; e < n_episodes; ++e)
      for (int i = 0; i < n_agents; ++i)
        obs.col(e * n_agents + i) = observe(cfg, states[e], i);

    actor(obs, flat_personas, probs, want_values ? &values : nullptr);
    if (probs.rows() != n_actions || probs.cols() != obs.cols())
      throw StateError("rollout: actor returned probs of wrong shape");

    for (int e = 0; e < n_episodes; ++e) {
      for (int i = 0; i < n_agents; ++i) {
        int col = e * n_agents + i;
        actions[i] = greedy ? argmax_column(probs, col) : sample_from_column(probs, col, samplers[e]);
        Trajectory& tr = out[e][i];
        tr.observations.col(t) = obs.col(col);
        tr.action_probs.col(t) = probs.col(col);
        tr.actions[t] = actions[i];
        if (want_values) tr.values[t] = values[col];
      }
      bool done = false;
      std::vector<StepRewards> rs = env_step(cfg, states[e], actions, &done);
      for (int i = 0; i < n_agents; ++i) {
        out[e][i].rewards[t] = rs[i].total();
        out[e][i].components[t] = rs[i];
      }
      if (done != (t == T - 1)) throw StateError("rollout: unexpected episode termination");
    }
  }
  return out;
}

std::vector<Trajectory> rollout(const EnvConfig& cfg, const PersonaCorpus& corpus,
                                const std::vector<int>& personas, const ActorFn& actor,
                                uint64_t seed, bool want_values, bool greedy) {
  return rollout_episodes(cfg, corpus, {personas}, actor, seed, want_values, greedy)[0];
}

void dump_trajectories_jsonl(const std::vector<Trajectory>& trajs, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  for (size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    for (int t = 0; t < static_cast<int>(tr.actions.size()); ++t, out << "\n") {
      nlohmann::json rec{{"agent", i},
                         {"persona_id", tr.persona_id},
                         {"t", t},
                         {"action", tr.actions[t]},
                         {"reward", tr.rewards[t]},
                         {"needs", tr.components[t].needs},
                         {"preferred", tr.components[t].preferred},
                         {"social", tr.components[t].social},
                         {"style", tr.components[t].style}};
      out << rec.dump();
    }
  }
}

}  // namespace personarl
