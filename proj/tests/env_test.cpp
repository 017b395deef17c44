#include <doctest.h>

#include "personarl/env.hpp"

#include <cstdio>
#include <fstream>
#include <set>

using namespace personarl;

namespace {

EnvConfig v1_config(int agents = 4) {
  EnvConfig cfg;
  cfg.grid_w = 6;
  cfg.grid_h = 6;
  cfg.n_agents = agents;
  cfg.ontology = ActionOntology::v1();
  return cfg;
}

EnvConfig v3_config(int agents = 4) {
  EnvConfig cfg = v1_config(agents);
  cfg.ontology = ActionOntology::v3();
  return cfg;
}

AgentState make_agent(int x, int y, const TraitVec& bf, const std::vector<int>& preferred,
                      double need_level) {
  AgentState a;
  a.x = x;
  a.y = y;
  a.big_five = bf;
  a.preferred_actions = preferred;
  a.needs = Vec::Constant(kNeedCount, need_level);
  return a;
}

// Minimal uniform-policy actor.
ActorFn uniform_actor(int n_actions) {
  return [n_actions](const Mat& obs, const std::vector<int>&, Mat& probs, Vec* values) {
    probs = Mat::Constant(n_actions, obs.cols(), 1.0 / n_actions);
    if (values) values->setZero();
  };
}

// Observation-dependent actor (detects cross-column batching mistakes).
ActorFn linear_actor(int n_actions, int obs_dim, uint64_t seed) {
  Mat w(n_actions, obs_dim);
  Rng rng(seed);
  for (int j = 0; j < w.cols(); ++j)
    for (int i = 0; i < w.rows(); ++i) w(i, j) = rng.normal();
  return [w](const Mat& obs, const std::vector<int>&, Mat& probs, Vec* values) {
    probs = softmax_columns(w * obs);
    if (values) *values = obs.colwise().sum().transpose();
  };
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("observation dimensions match the four standard preset shapes") {
  CHECK(observation_dim(v1_config(4)) == 20);
  EnvConfig v2 = v1_config(16);
  v2.grid_w = v2.grid_h = 12;
  CHECK(observation_dim(v2) == 56);
  CHECK(observation_dim(v3_config(4)) == 33);
  EnvConfig v3l = v3_config(16);
  v3l.grid_w = v3l.grid_h = 12;
  CHECK(observation_dim(v3l) == 69);
}

TEST_CASE("reset is deterministic, spreads agents, and draws needs in range") {
  EnvConfig cfg = v1_config();
  PersonaCorpus corpus = generate_corpus(15, 20, 42, ActionOntology::v1());
  std::vector<int> personas = {0, 21, 42, 63};

  EnvState a = env_reset(cfg, corpus, personas, 7);
  EnvState b = env_reset(cfg, corpus, personas, 7);
  EnvState c = env_reset(cfg, corpus, personas, 8);

  std::set<std::pair<int, int>> cells;
  for (int i = 0; i < cfg.n_agents; ++i) {
    CHECK(a.agents[i].x == b.agents[i].x);
    CHECK(a.agents[i].needs == b.agents[i].needs);
    CHECK(a.agents[i].persona_id == personas[i]);
    CHECK(a.agents[i].last_action == -1);
    CHECK(a.agents[i].needs.minCoeff() >= cfg.needs_init_lo);
    CHECK(a.agents[i].needs.maxCoeff() <= cfg.needs_init_hi);
    cells.insert({a.agents[i].x, a.agents[i].y});
  }
  CHECK(cells.size() == 4);  // distinct reset cells
  bool same_layout = true;
  for (int i = 0; i < cfg.n_agents; ++i)
    same_layout = same_layout && a.agents[i].x == c.agents[i].x && a.agents[i].y == c.agents[i].y &&
                  a.agents[i].needs == c.agents[i].needs;
  CHECK(!same_layout);

  CHECK_THROWS_AS(env_reset(cfg, corpus, {0, 1}, 7), ConfigError);
}

TEST_CASE("social activity step produces the exact reward decomposition") {
  EnvConfig cfg = v1_config(2);
  TraitVec host = archetype_big_five(2, 0);  // socialize sits in its top-3
  std::vector<int> pref = preferred_actions_for(host, cfg.ontology);
  const int socialize = cfg.ontology.action_id("socialize");
  REQUIRE(std::count(pref.begin(), pref.end(), socialize) == 1);

  EnvState s;
  s.agents.push_back(make_agent(2, 2, host, pref, 0.6));
  s.agents.push_back(make_agent(3, 3, host, pref, 0.6));
  s.agents[0].needs[kSocial] = 0.5;
  s.agents[1].needs[kSocial] = 0.2;

  bool done = false;
  std::vector<StepRewards> r = env_step(cfg, s, {socialize, socialize}, &done);

  // r_needs = 0.15 * (1 - social need before), social = 0.2 + 0.3 * cos(bf,bf),
  // preferred = 0.5; all doubles land exactly.
  CHECK(r[0].needs == doctest::Approx(0.15 * 0.5).epsilon(1e-12));
  CHECK(r[1].needs == doctest::Approx(0.15 * 0.8).epsilon(1e-12));
  CHECK(r[0].preferred == 0.5);
  CHECK(r[0].social == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r[1].social == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r[0].style == 0.0);  // style reward is v3-only
  CHECK(r[0].total() == doctest::Approx(0.075 + 0.5 + 0.5).epsilon(1e-12));

  // Needs: target gained then decayed, everything else only decayed.
  CHECK(s.agents[0].needs[kSocial] == doctest::Approx(0.5 + 0.075 - 0.01).epsilon(1e-12));
  CHECK(s.agents[0].needs[kHunger] == doctest::Approx(0.59).epsilon(1e-12));
  CHECK(s.agents[0].last_action == socialize);
  CHECK(s.agents[0].steps_since_change == 0);
  CHECK(s.step_index == 1);
  CHECK(!done);
}

TEST_CASE("social bonus needs adjacency and accumulates over pairs") {
  EnvConfig cfg = v1_config(3);
  TraitVec host = archetype_big_five(2, 0);
  const int socialize = cfg.ontology.action_id("socialize");
  const int eat = cfg.ontology.action_id("eat");

  // All three on one cell: each agent is in two qualifying pairs.
  EnvState s;
  for (int i = 0; i < 3; ++i) s.agents.push_back(make_agent(1, 1, host, {}, 0.5));
  std::vector<StepRewards> r = env_step(cfg, s, {socialize, socialize, socialize}, nullptr);
  for (int i = 0; i < 3; ++i) CHECK(r[i].social == doctest::Approx(1.0).epsilon(1e-12));

  // Too far apart: no bonus. Non-social activity: no bonus either.
  EnvState far;
  far.agents.push_back(make_agent(0, 0, host, {}, 0.5));
  far.agents.push_back(make_agent(2, 0, host, {}, 0.5));
  far.agents.push_back(make_agent(4, 4, host, {}, 0.5));
  r = env_step(cfg, far, {socialize, socialize, socialize}, nullptr);
  CHECK(r[0].social == 0.0);
  CHECK(r[1].social == 0.0);

  EnvState mixed;
  mixed.agents.push_back(make_agent(1, 1, host, {}, 0.5));
  mixed.agents.push_back(make_agent(1, 2, host, {}, 0.5));
  mixed.agents.push_back(make_agent(2, 1, host, {}, 0.5));
  r = env_step(cfg, mixed, {socialize, eat, socialize}, nullptr);
  CHECK(r[0].social == doctest::Approx(0.5).epsilon(1e-12));  // only the 0-2 pair
  CHECK(r[1].social == 0.0);
}

TEST_CASE("movement clips at borders, earns nothing, and resolves pre-reward") {
  EnvConfig cfg = v1_config(2);
  TraitVec host = archetype_big_five(2, 0);
  const int west = cfg.ontology.action_id("move_west");
  const int south = cfg.ontology.action_id("move_south");
  const int east = cfg.ontology.action_id("move_east");
  const int north = cfg.ontology.action_id("move_north");
  const int socialize = cfg.ontology.action_id("socialize");

  EnvState s;
  s.agents.push_back(make_agent(0, 0, host, {}, 0.5));
  s.agents.push_back(make_agent(5, 5, host, {}, 0.5));
  std::vector<StepRewards> r = env_step(cfg, s, {west, east}, nullptr);
  CHECK(s.agents[0].x == 0);  // clipped
  CHECK(s.agents[1].x == 5);  // clipped
  CHECK(r[0].total() == 0.0);
  r = env_step(cfg, s, {south, north}, nullptr);
  CHECK(s.agents[0].y == 0);
  CHECK(s.agents[1].y == 5);
  r = env_step(cfg, s, {east, south}, nullptr);
  CHECK(s.agents[0].x == 1);
  CHECK(s.agents[1].y == 4);
  // Needs only decay on movement steps.
  CHECK(s.agents[0].needs[kHunger] == doctest::Approx(0.5 - 0.03).epsilon(1e-12));

  // Movement happens before the social adjacency test: 2,0 apart becomes 1,0.
  EnvState pre;
  pre.agents.push_back(make_agent(0, 0, host, {}, 0.5));
  pre.agents.push_back(make_agent(2, 0, host, {}, 0.5));
  r = env_step(cfg, pre, {socialize, west}, nullptr);
  CHECK(r[0].social == 0.0);  // partner moved but chose movement, not social
  EnvState pre2;
  pre2.agents.push_back(make_agent(0, 0, host, {}, 0.5));
  pre2.agents.push_back(make_agent(0, 2, host, {}, 0.5));
  env_step(cfg, pre2, {socialize, south}, nullptr);
  r = env_step(cfg, pre2, {socialize, socialize}, nullptr);
  CHECK(r[0].social == doctest::Approx(0.5).epsilon(1e-12));  // now adjacent
}

TEST_CASE("needs clamp at both ends and the episode terminates exactly") {
  EnvConfig cfg = v1_config(1);
  cfg.episode_length = 3;
  TraitVec host = archetype_big_five(2, 0);
  const int eat = cfg.ontology.action_id("eat");
  const int north = cfg.ontology.action_id("move_north");

  EnvState s;
  s.agents.push_back(make_agent(2, 2, host, {}, 0.005));
  s.agents[0].needs[kHunger] = 0.999;
  bool done = false;
  std::vector<StepRewards> r = env_step(cfg, s, {eat}, &done);
  CHECK(r[0].needs == doctest::Approx(0.15 * 0.001).epsilon(1e-9));
  CHECK(s.agents[0].needs[kHunger] == doctest::Approx(0.999 + 0.00015 - 0.01).epsilon(1e-12));
  CHECK(s.agents[0].needs[kSleep] == 0.0);  // clamped at zero
  CHECK(!done);
  env_step(cfg, s, {north}, &done);
  CHECK(!done);
  env_step(cfg, s, {north}, &done);
  CHECK(done);
  CHECK_THROWS_AS(env_step(cfg, s, {north}, &done), StateError);

  EnvState fresh;
  fresh.agents.push_back(make_agent(2, 2, host, {}, 0.5));
  CHECK_THROWS_AS(env_step(cfg, fresh, {99}, &done), ConfigError);
  CHECK_THROWS_AS(env_step(cfg, fresh, {0, 0}, &done), ConfigError);
}

TEST_CASE("style reward applies to v3 activities only") {
  EnvConfig cfg = v3_config(1);
  TraitVec bf = archetype_big_five(0, 0);
  const int deep = cfg.ontology.action_id("study_deep");
  const int north = cfg.ontology.action_id("move_north");

  EnvState s;
  s.agents.push_back(make_agent(2, 2, bf, {}, 0.5));
  std::vector<StepRewards> r = env_step(cfg, s, {deep}, nullptr);
  double expected = 0.3 * bf.dot(cfg.ontology.action(deep).style) / bf.norm();
  CHECK(r[0].style == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r[0].needs == doctest::Approx(0.15 * 0.5).epsilon(1e-12));
  r = env_step(cfg, s, {north}, nullptr);
  CHECK(r[0].style == 0.0);
}

TEST_CASE("v3 affordance zones tile the grid deterministically") {
  EnvConfig cfg = v3_config();
  PersonaCorpus corpus = generate_corpus(15, 20, 42, ActionOntology::v3());
  std::vector<int> personas = {0, 21, 42, 63};
  EnvState a = env_reset(cfg, corpus, personas, 3);
  EnvState b = env_reset(cfg, corpus, personas, 3);
  REQUIRE(a.affordance.size() == 36);
  CHECK(a.affordance == b.affordance);
  std::set<int> zones;
  for (int z : a.affordance) {
    CHECK(z >= 0);
    CHECK(z < kNeedCount);
    zones.insert(z);
  }
  CHECK(zones.size() == kNeedCount);

  // The affordance one-hot block in the observation sums to one.
  Vec obs = observe(cfg, a, 0);
  REQUIRE(obs.size() == 33);
  double onehot_sum = obs.segment(20, kNeedCount).sum();
  CHECK(onehot_sum == 1.0);
}

TEST_CASE("observation entries carry the documented layout and stay bounded") {
  EnvConfig cfg = v1_config(2);
  TraitVec host = archetype_big_five(2, 0);
  EnvState s;
  s.agents.push_back(make_agent(0, 0, host, {}, 0.5));
  s.agents.push_back(make_agent(5, 5, host, {}, 0.25));
  Vec obs = observe(cfg, s, 0);
  REQUIRE(obs.size() == 2 + 1 + 8 + 3);
  CHECK(obs[0] == 0.0);
  CHECK(obs[1] == 0.0);
  CHECK(obs[2] == 0.0);
  CHECK(obs[3] == 0.5);
  CHECK(obs[11] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(obs[12] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(obs[13] == doctest::Approx(-1.0 / 12.0).epsilon(1e-12));  // no action yet

  Vec other = observe(cfg, s, 1);
  CHECK(other[0] == 1.0);
  CHECK(other[11] == doctest::Approx(-5.0 / 6.0).epsilon(1e-12));

  // Property: every entry stays in [-1, 1] through random v3 rollouts.
  EnvConfig pcfg = v3_config();
  PersonaCorpus corpus = generate_corpus(15, 20, 42, ActionOntology::v3());
  auto trajs = rollout(pcfg, corpus, {0, 21, 42, 63}, uniform_actor(20), 5, false);
  for (const Trajectory& tr : trajs) {
    CHECK(tr.observations.minCoeff() >= -1.0);
    CHECK(tr.observations.maxCoeff() <= 1.0);
  }
}

TEST_CASE("routine and history features track repeated actions") {
  EnvConfig cfg = v3_config(1);
  TraitVec bf = archetype_big_five(0, 0);
  const int deep = cfg.ontology.action_id("study_deep");
  const int north = cfg.ontology.action_id("move_north");
  EnvState s;
  s.agents.push_back(make_agent(2, 2, bf, {}, 0.5));
  s.affordance.assign(36, 0);

  // Single-agent v3 layout: base 11 | affordance 8 | social 3 | routine 2.
  const int kModeIdx = 22, kStreakIdx = 23;
  for (int t = 0; t < 3; ++t) env_step(cfg, s, {deep}, nullptr);
  CHECK(s.agents[0].steps_since_change == 2);
  Vec obs = observe(cfg, s, 0);
  REQUIRE(obs.size() == 24);
  CHECK(obs[kModeIdx] == 1.0);  // all recent actions identical
  CHECK(obs[kStreakIdx] == doctest::Approx(2.0 / 8.0).epsilon(1e-12));

  env_step(cfg, s, {north}, nullptr);
  CHECK(s.agents[0].steps_since_change == 0);
  obs = observe(cfg, s, 0);
  CHECK(obs[kModeIdx] == doctest::Approx(3.0 / 4.0).epsilon(1e-12));

  for (int t = 0; t < 12; ++t) env_step(cfg, s, {north}, nullptr);
  CHECK(s.agents[0].recent_actions.size() == 8);
  obs = observe(cfg, s, 0);
  CHECK(obs[kModeIdx] == 1.0);
  CHECK(obs[kStreakIdx] == 1.0);  // capped at 8 steps since change
}

TEST_CASE("rollouts are deterministic with isolated per-episode streams") {
  EnvConfig cfg = v1_config();
  PersonaCorpus corpus = generate_corpus(15, 20, 42, ActionOntology::v1());
  cfg.episode_length = 16;
  ActorFn actor = linear_actor(12, observation_dim(cfg), 77);
  std::vector<int> p0 = {0, 21, 42, 63}, p1 = {100, 121, 142, 163};

  auto batch = rollout_episodes(cfg, corpus, {p0, p1}, actor, 9, true);
  auto batch_again = rollout_episodes(cfg, corpus, {p0, p1}, actor, 9, true);
  auto solo = rollout_episodes(cfg, corpus, {p0}, actor, 9, true);

  REQUIRE(batch.size() == 2);
  for (int i = 0; i < 4; ++i) {
    CHECK(batch[0][i].actions == batch_again[0][i].actions);
    CHECK(batch[0][i].rewards == batch_again[0][i].rewards);
    CHECK(batch[0][i].observations == batch_again[0][i].observations);
    // Episode 0 is bit-identical whether or not episode 1 runs alongside.
    CHECK(batch[0][i].actions == solo[0][i].actions);
    CHECK(batch[0][i].observations == solo[0][i].observations);
    CHECK(batch[0][i].values == solo[0][i].values);
    CHECK(batch[0][i].persona_id == p0[i]);
    CHECK(batch[1][i].persona_id == p1[i]);
    // Reward bookkeeping is internally consistent.
    for (int t = 0; t < 16; ++t)
      CHECK(batch[0][i].rewards[t] ==
            doctest::Approx(batch[0][i].components[t].total()).epsilon(1e-12));
  }

  // Greedy rollouts take the argmax action everywhere.
  auto greedy = rollout(cfg, corpus, p0, actor, 9, false, true);
  for (const Trajectory& tr : greedy)
    for (int t = 0; t < 16; ++t) {
      int argmax = 0;
      tr.action_probs.col(t).maxCoeff(&argmax);
      CHECK(tr.actions[t] == argmax);
    }

  // Structured trajectory dump: one record per agent-step.
  std::string path = "/tmp/personarl_test_traj.jsonl";
  dump_trajectories_jsonl(greedy, path);
  std::ifstream in(path);
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 4 * 16);
  std::remove(path.c_str());
}

}  // TEST_SUITE
