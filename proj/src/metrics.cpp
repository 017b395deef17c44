#include "personarl/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace personarl {

using nlohmann::json;

// --- Statistics ---------------------------------------------------------------

WilsonInterval wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) throw ConfigError("wilson_interval: trials must be positive");
  if (successes < 0 || successes > trials) {
    throw ConfigError("wilson_interval: successes outside [0, trials]");
  }
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = (z / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  WilsonInterval w;
  w.low = std::max(0.0, center - half);
  w.high = std::min(1.0, center + half);
  return w;
}

Vec average_ranks(const Vec& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  Vec ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x[order[static_cast<size_t>(j + 1)]] == x[order[static_cast<size_t>(i)]]) {
      ++j;
    }
    // Positions i..j (0-based) share the average of ranks i+1..j+1.
    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[static_cast<size_t>(k)]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw StateError("spearman_rho: length mismatch");
  if (x.size() < 2) throw UndefinedCorrelationError("spearman_rho: need at least 2 points");
  Vec rx = average_ranks(x);
  Vec ry = average_ranks(y);
  Vec cx = rx.array() - rx.mean();
  Vec cy = ry.array() - ry.mean();
  const double sx = cx.squaredNorm();
  const double sy = cy.squaredNorm();
  if (sx <= 0.0 || sy <= 0.0) {
    throw UndefinedCorrelationError("spearman_rho: constant axis (zero rank variance)");
  }
  return cx.dot(cy) / std::sqrt(sx * sy);
}

// --- Shared rollout protocol ----------------------------------------------------

namespace {

// One episode slot per (persona index, episode): agent 0 carries the target,
// agents 1..N-1 carry a seeded permutation of the other evaluation personas
// (cycled when the pool is smaller than the agent count).
std::vector<std::vector<int>> target_filler_assignments(const std::vector<int>& personas,
                                                        int n_agents, int episodes_per_persona,
                                                        uint64_t seed) {
  std::vector<std::vector<int>> out;
  for (size_t ti = 0; ti < personas.size(); ++ti) {
    std::vector<int> others;
    for (size_t j = 0; j < personas.size(); ++j) {
      if (j != ti) others.push_back(personas[j]);
    }
    for (int e = 0; e < episodes_per_persona; ++e) {
      std::vector<int> ids = {personas[ti]};
      if (n_agents > 1) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(ti), static_cast<uint64_t>(e)));
        if (others.empty()) {
          ids.insert(ids.end(), static_cast<size_t>(n_agents - 1), personas[ti]);
        } else {
          std::vector<int> perm = rng.permutation(static_cast<int>(others.size()));
          for (int a = 0; a < n_agents - 1; ++a) {
            ids.push_back(others[static_cast<size_t>(perm[static_cast<size_t>(a) % perm.size()])]);
          }
        }
      }
      out.push_back(std::move(ids));
    }
  }
  return out;
}

// Rolls out the target/filler episodes and encodes agent 0 of each episode.
// Returns codes (kEmbedDim x episodes) in (persona index, episode) order.
Mat encode_target_rollouts(const AgentModel& model, const RawEmbeddingSet& raws,
                           const EnvConfig& env, const PersonaCorpus& corpus,
                           const std::vector<int>& personas, int episodes_per_persona,
                           uint64_t seed, double* mean_agent_return) {
  auto assignments =
      target_filler_assignments(personas, env.n_agents, episodes_per_persona, mix_seed(seed, 1));
  ActorFn actor = make_actor(model, raws);
  auto episodes = rollout_episodes(env, corpus, assignments, actor, mix_seed(seed, 2),
                                   /*want_values=*/false);
  std::vector<std::vector<int>> action_seqs;
  double return_sum = 0.0;
  for (const auto& ep : episodes) {
    action_seqs.push_back(ep[0].actions);
    return_sum += ep[0].episode_return();
  }
  if (mean_agent_return != nullptr) {
    *mean_agent_return = episodes.empty() ? 0.0 : return_sum / static_cast<double>(episodes.size());
  }
  return encode_actions(model.encoder, action_seqs);
}

double symmetric_kl_mean(const Mat& p, const Mat& q) {
  // Mean over state columns of (KL(P||Q) + KL(Q||P)) / 2, log-floored at 1e-12.
  Eigen::ArrayXXd lp = p.array().max(1e-12).log();
  Eigen::ArrayXXd lq = q.array().max(1e-12).log();
  Eigen::ArrayXXd diff = lp - lq;
  double forward = (p.array() * diff).colwise().sum().mean();
  double backward = (q.array() * (-diff)).colwise().sum().mean();
  return 0.5 * (forward + backward);
}

std::string cpu_model_string() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.find("model name");
    if (pos != std::string::npos) {
      auto colon = line.find(':');
      if (colon != std::string::npos && colon + 2 <= line.size()) {
        return line.substr(colon + 2);
      }
    }
  }
  return "unknown-cpu";
}

json interval_json(const WilsonInterval& w) { return json::array({w.low, w.high}); }

}  // namespace

// --- Zero-shot persona identification --------------------------------------------

KnnResult knn_zero_shot(const AgentModel& model, const RawEmbeddingSet& raws,
                        const EnvConfig& env, const PersonaCorpus& corpus,
                        const CorpusSplit& split, int episodes_per_persona, uint64_t seed) {
  if (episodes_per_persona < 1) {
    throw ConfigError("knn_zero_shot: episodes_per_persona must be >= 1");
  }
  if (split.heldout_ids.empty()) throw ConfigError("knn_zero_shot: empty held-out set");
  std::set<int> train_set(split.train_ids.begin(), split.train_ids.end());
  for (int id : split.heldout_ids) {
    if (train_set.count(id) != 0) {
      throw ProtocolError("knn_zero_shot: held-out persona " + std::to_string(id) +
                          " appears in the train split (leakage)");
    }
  }

  const auto& heldout = split.heldout_ids;
  const int h = static_cast<int>(heldout.size());

  // Projected persona embeddings, one unit column per held-out persona.
  Mat persona_embeds(kEmbedDim, h);
  for (int i = 0; i < h; ++i) persona_embeds.col(i) = conditioning(model, raws, heldout[i]);

  KnnResult res;
  res.codes = encode_target_rollouts(model, raws, env, corpus, heldout, episodes_per_persona, seed,
                                     &res.mean_agent_return);
  res.n = h * episodes_per_persona;
  res.chance_level = 1.0 / static_cast<double>(h);

  for (int ti = 0; ti < h; ++ti) {
    for (int e = 0; e < episodes_per_persona; ++e) {
      const Eigen::Index col = static_cast<Eigen::Index>(ti) * episodes_per_persona + e;
      Vec sims = persona_embeds.transpose() * res.codes.col(col);
      int rank = 1;
      int best = 0;
      for (int j = 1; j < h; ++j) {
        if (sims[j] > sims[best]) best = j;
      }
      for (int j = 0; j < h; ++j) {
        if (j == ti) continue;
        if (sims[j] > sims[ti] || (sims[j] == sims[ti] && j < ti)) ++rank;
      }
      res.records.push_back({heldout[ti], e, heldout[best], rank});
      if (rank == 1) ++res.top1_successes;
      if (rank <= 3) ++res.top3_successes;
    }
  }
  res.top1 = static_cast<double>(res.top1_successes) / res.n;
  res.top3 = static_cast<double>(res.top3_successes) / res.n;
  res.top1_ci = wilson_interval(res.top1_successes, res.n);
  res.top3_ci = wilson_interval(res.top3_successes, res.n);
  return res;
}

// --- Pairwise behavioral KL -------------------------------------------------------

PairwiseKlResult pairwise_action_kl(const AgentModel& model, const RawEmbeddingSet& raws,
                                    const EnvConfig& env, const PersonaCorpus& corpus,
                                    const std::vector<int>& personas, int n_pairs, int n_states,
                                    uint64_t seed) {
  const int p_count = static_cast<int>(personas.size());
  if (p_count < 2) throw ConfigError("pairwise_action_kl: need >= 2 personas");
  if (n_pairs < 1 || n_states < 1) {
    throw ConfigError("pairwise_action_kl: n_pairs and n_states must be >= 1");
  }

  PairwiseKlResult res;

  // Sample distinct unordered pairs; enumerate all when the pool is small.
  const long total_pairs = static_cast<long>(p_count) * (p_count - 1) / 2;
  Rng rng(mix_seed(seed, 0xA11CE));
  if (total_pairs <= n_pairs) {
    for (int i = 0; i < p_count; ++i)
      for (int j = i + 1; j < p_count; ++j) res.pairs.push_back({personas[i], personas[j]});
  } else {
    std::set<std::pair<int, int>> seen;
    while (static_cast<int>(res.pairs.size()) < n_pairs) {
      int i = rng.uniform_int(p_count);
      int j = rng.uniform_int(p_count - 1);
      if (j >= i) ++j;
      if (i > j) std::swap(i, j);
      if (seen.insert({i, j}).second) res.pairs.push_back({personas[i], personas[j]});
    }
  }

  // State pool: fresh rollouts of the evaluated policy, personas round-robin
  // from a seeded shuffle of the evaluation set (the documented mixing
  // policy), enough episodes to cover n_states observation columns.
  std::vector<int> shuffled(personas);
  {
    std::vector<int> perm = rng.permutation(p_count);
    for (int i = 0; i < p_count; ++i) shuffled[static_cast<size_t>(i)] = personas[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  const int cols_per_episode = env.n_agents * env.episode_length;
  const int n_episodes = (n_states + cols_per_episode - 1) / cols_per_episode;
  std::vector<std::vector<int>> assignments;
  int cursor = 0;
  for (int e = 0; e < n_episodes; ++e) {
    std::vector<int> ids;
    for (int a = 0; a < env.n_agents; ++a) ids.push_back(shuffled[static_cast<size_t>(cursor++ % p_count)]);
    assignments.push_back(std::move(ids));
  }
  ActorFn actor = make_actor(model, raws);
  auto episodes = rollout_episodes(env, corpus, assignments, actor, mix_seed(seed, 0x57A7E5),
                                   /*want_values=*/false);
  const int total_cols = n_episodes * cols_per_episode;
  Mat pool(observation_dim(env), total_cols);
  int c = 0;
  for (const auto& ep : episodes) {
    for (const auto& traj : ep) {
      pool.middleCols(c, env.episode_length) = traj.observations;
      c += env.episode_length;
    }
  }
  Mat states(pool.rows(), n_states);
  if (total_cols >= n_states) {
    std::vector<int> pick = rng.sample_without_replacement(total_cols, n_states);
    for (int k = 0; k < n_states; ++k) states.col(k) = pool.col(pick[static_cast<size_t>(k)]);
  } else {
    for (int k = 0; k < n_states; ++k) states.col(k) = pool.col(k % total_cols);
  }

  // Action distributions per persona over the shared states, computed once.
  std::set<int> used;
  for (const auto& pr : res.pairs) {
    used.insert(pr[0]);
    used.insert(pr[1]);
  }
  std::map<int, Mat> probs;
  for (int id : used) probs[id] = policy_probs(model, raws, id, states);

  res.per_pair.resize(static_cast<Eigen::Index>(res.pairs.size()));
  for (size_t k = 0; k < res.pairs.size(); ++k) {
    res.per_pair[static_cast<Eigen::Index>(k)] =
        symmetric_kl_mean(probs.at(res.pairs[k][0]), probs.at(res.pairs[k][1]));
  }
  res.mean_kl = res.per_pair.mean();
  return res;
}

double spearman_alignment(const PairwiseKlResult& kl, const ProjectionParams& projection,
                          const RawEmbeddingSet& raws) {
  if (kl.pairs.size() < 10) throw ConfigError("spearman_alignment: need >= 10 pairs");
  Vec dist(static_cast<Eigen::Index>(kl.pairs.size()));
  std::map<int, Vec> cache;
  auto embed = [&](int id) -> const Vec& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, project(projection, raws.at(id))).first;
    return it->second;
  };
  for (size_t k = 0; k < kl.pairs.size(); ++k) {
    dist[static_cast<Eigen::Index>(k)] = (embed(kl.pairs[k][0]) - embed(kl.pairs[k][1])).norm();
  }
  return spearman_rho(dist, kl.per_pair);
}

// --- Trajectory coherence -----------------------------------------------------------

CoherenceResult coherence_ratio(const AgentModel& model, const RawEmbeddingSet& raws,
                                const EnvConfig& env, const PersonaCorpus& corpus,
                                const std::vector<int>& personas, int episodes_per_persona,
                                uint64_t seed) {
  if (episodes_per_persona < 2) {
    throw ConfigError("coherence_ratio: episodes_per_persona must be >= 2");
  }
  if (personas.size() < 2) throw ConfigError("coherence_ratio: need >= 2 personas");

  Mat codes = encode_target_rollouts(model, raws, env, corpus, personas, episodes_per_persona,
                                     seed, nullptr);
  const int p_count = static_cast<int>(personas.size());
  const int epp = episodes_per_persona;

  double intra_sum = 0.0;
  long intra_n = 0;
  double inter_sum = 0.0;
  long inter_n = 0;
  Mat gram = codes.transpose() * codes;  // codes are unit columns
  const Eigen::Index total = codes.cols();
  for (Eigen::Index a = 0; a < total; ++a) {
    for (Eigen::Index b = a + 1; b < total; ++b) {
      if (a / epp == b / epp) {
        intra_sum += gram(a, b);
        ++intra_n;
      } else {
        inter_sum += gram(a, b);
        ++inter_n;
      }
    }
  }
  (void)p_count;
  CoherenceResult res;
  res.intra = intra_sum / static_cast<double>(intra_n);
  res.inter = inter_sum / static_cast<double>(inter_n);
  if (res.inter > -1e-12) {
    res.ratio = res.intra / std::max(res.inter, 1e-6);
    res.ratio_valid = true;
  } else {
    // Negative cross-persona mean: a ratio would be misleading; report the
    // signed means only.
    res.ratio = 0.0;
    res.ratio_valid = false;
  }
  return res;
}

// --- Latency ---------------------------------------------------------------------

LatencyStats latency_benchmark(const AgentModel& model, const RawEmbeddingSet& raws,
                               const EnvConfig& env, const PersonaCorpus& corpus, int trials,
                               int warmup, uint64_t seed) {
  if (trials <= 0) throw ConfigError("latency_benchmark: trials must be positive");
  if (warmup < 0) throw ConfigError("latency_benchmark: warmup must be >= 0");

  // Fixed single state; conditioning projected once (per-persona work).
  const int persona = raws.by_persona.begin()->first;
  std::vector<int> ids(static_cast<size_t>(env.n_agents), persona);
  EnvState state = env_reset(env, corpus, ids, seed);
  Vec e = conditioning(model, raws, persona);
  Mat embeds = e;
  double sink = 0.0;

  auto one_step = [&]() {
    Mat obs(observation_dim(env), 1);
    obs.col(0) = observe(env, state, 0);  // observation packing is timed
    Mat probs = softmax_columns(mlp_forward(model.policy, obs, embeds));
    sink += probs(0, 0);
  };

  for (int i = 0; i < warmup; ++i) one_step();
  std::vector<double> ms(static_cast<size_t>(trials));
  for (int i = 0; i < trials; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    one_step();
    auto t1 = std::chrono::steady_clock::now();
    ms[static_cast<size_t>(i)] =
        std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count();
  }
  if (!std::isfinite(sink)) throw NumericalError("latency_benchmark: non-finite policy output");

  LatencyStats s;
  s.trials = trials;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(trials);
  std::sort(ms.begin(), ms.end());
  const size_t idx = static_cast<size_t>(std::floor(0.95 * static_cast<double>(trials - 1)));
  s.p95_ms = ms[idx];
  s.hardware = cpu_model_string();
  return s;
}

// --- Aggregate report ----------------------------------------------------------------

std::string MetricsReport::to_json() const {
  json j;
  j["n_personas"] = n_personas;
  j["n_trajectories"] = n_trajectories;
  j["chance_level"] = chance_level;
  j["zs_top1"] = zs_top1;
  j["zs_top1_ci"] = interval_json(zs_top1_ci);
  j["zs_top3"] = zs_top3;
  j["zs_top3_ci"] = interval_json(zs_top3_ci);
  j["mean_pairwise_kl"] = mean_pairwise_kl;
  j["spearman_rho"] = spearman;
  j["spearman_defined"] = spearman_defined;
  j["coherence_ratio"] = coherence;
  j["coherence_intra"] = coherence_intra;
  j["coherence_inter"] = coherence_inter;
  j["coherence_valid"] = coherence_valid;
  j["eval_return"] = eval_return;
  if (has_latency) {
    j["latency_ms"] = {{"mean", latency.mean_ms},
                       {"p95", latency.p95_ms},
                       {"trials", latency.trials},
                       {"hardware", latency.hardware}};
  }
  return j.dump(2);
}

std::string MetricsReport::csv_header() {
  return "run,eval_return,zs_top1,zs_top1_lo,zs_top1_hi,zs_top3,zs_top3_lo,zs_top3_hi,"
         "mean_pairwise_kl,spearman_rho,coherence_ratio,chance_level,n,latency_mean_ms";
}

std::string MetricsReport::csv_row(const std::string& run_label) const {
  std::ostringstream os;
  os.precision(17);
  os << run_label << ',' << eval_return << ',' << zs_top1 << ',' << zs_top1_ci.low << ','
     << zs_top1_ci.high << ',' << zs_top3 << ',' << zs_top3_ci.low << ',' << zs_top3_ci.high << ','
     << mean_pairwise_kl << ',' << spearman << ',' << coherence << ',' << chance_level << ','
     << n_trajectories << ',';
  if (has_latency) {
    os << latency.mean_ms;
  } else {
    os << "n/a";
  }
  return os.str();
}

MetricsReport run_full_eval(const AgentModel& model, const RawEmbeddingSet& raws,
                            const EnvConfig& env, const PersonaCorpus& corpus,
                            const CorpusSplit& split, const EvalOptions& opts, KnnResult* knn_out,
                            PairwiseKlResult* kl_out) {
  MetricsReport rep;
  KnnResult knn = knn_zero_shot(model, raws, env, corpus, split, opts.episodes_per_persona,
                                mix_seed(opts.seed, 101));
  rep.n_personas = static_cast<int>(split.heldout_ids.size());
  rep.n_trajectories = knn.n;
  rep.chance_level = knn.chance_level;
  rep.zs_top1 = knn.top1;
  rep.zs_top3 = knn.top3;
  rep.zs_top1_ci = knn.top1_ci;
  rep.zs_top3_ci = knn.top3_ci;
  rep.eval_return = knn.mean_agent_return;
  if (!(rep.zs_top1_ci.low <= rep.zs_top1 && rep.zs_top1 <= rep.zs_top1_ci.high)) {
    throw StateError("run_full_eval: top-1 CI does not contain the point estimate");
  }
  if (!(rep.zs_top3_ci.low <= rep.zs_top3 && rep.zs_top3 <= rep.zs_top3_ci.high)) {
    throw StateError("run_full_eval: top-3 CI does not contain the point estimate");
  }

  PairwiseKlResult kl = pairwise_action_kl(model, raws, env, corpus, split.heldout_ids,
                                           opts.kl_pairs, opts.kl_states, mix_seed(opts.seed, 202));
  rep.mean_pairwise_kl = kl.mean_kl;
  try {
    rep.spearman = spearman_alignment(kl, model.projection, raws);
    rep.spearman_defined = true;
  } catch (const UndefinedCorrelationError&) {
    // Degenerate geometry (e.g. a conditioning-blind policy): flagged in the
    // report rather than silently reported as 0.
    rep.spearman = 0.0;
    rep.spearman_defined = false;
  }

  CoherenceResult coh = coherence_ratio(model, raws, env, corpus, split.heldout_ids,
                                        std::max(2, opts.episodes_per_persona),
                                        mix_seed(opts.seed, 303));
  rep.coherence = coh.ratio;
  rep.coherence_intra = coh.intra;
  rep.coherence_inter = coh.inter;
  rep.coherence_valid = coh.ratio_valid;

  if (knn_out != nullptr) *knn_out = std::move(knn);
  if (kl_out != nullptr) *kl_out = std::move(kl);
  return rep;
}

}  // namespace personarl
