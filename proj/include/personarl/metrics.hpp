#pragma once

// Evaluation metrics over a trained agent:
//   - zero-shot persona identification (k-NN over trajectory embeddings)
//     with Wilson 95% confidence intervals,
//   - mean pairwise behavioral KL between persona-conditioned policies,
//   - Spearman alignment between embedding distance and behavioral KL,
//   - trajectory coherence ratio (intra/inter persona code cosine),
//   - batch-1 inference latency.
//
// All sampled protocols are seed-pinned and single-threaded so repeated
// evaluations are bit-identical (latency excluded: it measures wall time and
// is only populated by the explicit bench path).

#include "personarl/agent.hpp"

#include <array>
#include <string>
#include <vector>

namespace personarl {

// --- Statistics ---------------------------------------------------------------

struct WilsonInterval {
  double low = 0.0;
  double high = 0.0;
};

// Wilson score interval for a binomial proportion. Throws ConfigError when
// trials <= 0 or successes is outside [0, trials].
WilsonInterval wilson_interval(int successes, int trials, double z = 1.96);

// 1-based ranks with ties averaged (rank = less + (equal + 1) / 2).
Vec average_ranks(const Vec& x);

// Spearman rank correlation; throws UndefinedCorrelationError when either
// axis is constant (zero rank variance).
double spearman_rho(const Vec& x, const Vec& y);

// --- Zero-shot persona identification -----------------------------------------

struct KnnRecord {
  int target_persona = -1;
  int episode = 0;
  int predicted_persona = -1;
  int target_rank = 0;  // 1 = best
};

struct KnnResult {
  int n = 0;  // judgments = heldout personas x episodes_per_persona
  int top1_successes = 0;
  int top3_successes = 0;
  double top1 = 0.0, top3 = 0.0;
  WilsonInterval top1_ci, top3_ci;
  double chance_level = 0.0;  // 1 / heldout count
  std::vector<KnnRecord> records;
  Mat codes;                  // kEmbedDim x n trajectory embeddings (by record)
  double mean_agent_return = 0.0;  // mean episode return of the target agent
};

// Protocol: for every held-out persona, roll out episodes_per_persona
// episodes where agent 0 carries the target persona and the remaining agents
// carry seeded fillers drawn from the other held-out personas. Agent 0's
// action sequence is encoded and matched by cosine against the projected
// embeddings of all held-out personas; ranks break ties toward the lower
// persona index. Throws ProtocolError when held-out ids overlap the train
// ids.
KnnResult knn_zero_shot(const AgentModel& model, const RawEmbeddingSet& raws,
                        const EnvConfig& env, const PersonaCorpus& corpus,
                        const CorpusSplit& split, int episodes_per_persona, uint64_t seed);

// --- Pairwise behavioral KL ----------------------------------------------------

struct PairwiseKlResult {
  std::vector<std::array<int, 2>> pairs;  // persona id pairs, p < q
  Vec per_pair;                           // mean symmetric KL (nats) per pair
  double mean_kl = 0.0;
};

// Symmetric KL = (KL(P||Q) + KL(Q||P)) / 2 between action distributions of
// two personas at shared states, averaged over states and pairs. States are
// sampled from fresh rollouts of the evaluated policy under seeded persona
// assignments from `personas` (the documented mixing policy); pairs are
// sampled without replacement from all unordered persona pairs (all pairs
// when fewer than n_pairs exist). Probabilities are floored at 1e-12 inside
// the logs.
PairwiseKlResult pairwise_action_kl(const AgentModel& model, const RawEmbeddingSet& raws,
                                    const EnvConfig& env, const PersonaCorpus& corpus,
                                    const std::vector<int>& personas, int n_pairs, int n_states,
                                    uint64_t seed);

// Spearman rho between projected-embedding Euclidean distance and behavioral
// KL over the pairs of `kl`. The projection is explicit so the same
// behavioral measurements can be ranked under trained vs freshly initialized
// projections. Requires >= 10 pairs (ConfigError) and propagates
// UndefinedCorrelationError from constant axes.
double spearman_alignment(const PairwiseKlResult& kl, const ProjectionParams& projection,
                          const RawEmbeddingSet& raws);

// --- Trajectory coherence -------------------------------------------------------

struct CoherenceResult {
  double intra = 0.0;  // mean cosine among same-persona codes
  double inter = 0.0;  // mean cosine among cross-persona codes (signed)
  double ratio = 0.0;  // intra / max(inter, 1e-6); 0 when not a valid ratio
  bool ratio_valid = false;
};

// Rolls out episodes_per_persona (>= 2) episodes per persona with the same
// agent-0/filler protocol as knn_zero_shot, encodes agent 0's trajectory, and
// compares mean within-persona to mean across-persona cosine. A cross-persona
// mean at or below -1e-12 is reported as a non-ratio diagnostic
// (ratio_valid = false, signed means preserved).
CoherenceResult coherence_ratio(const AgentModel& model, const RawEmbeddingSet& raws,
                                const EnvConfig& env, const PersonaCorpus& corpus,
                                const std::vector<int>& personas, int episodes_per_persona,
                                uint64_t seed);

// --- Latency --------------------------------------------------------------------

struct LatencyStats {
  double mean_ms = 0.0;
  double p95_ms = 0.0;  // nearest-rank on sorted per-trial times
  int trials = 0;
  std::string hardware;
};

// Wall-clock per batch-1 policy forward, including observation packing, on a
// reset environment state. Conditioning is projected once up front (it is
// per-persona, not per-step). trials <= 0 is a ConfigError; use >= 1000
// trials for reportable numbers.
LatencyStats latency_benchmark(const AgentModel& model, const RawEmbeddingSet& raws,
                               const EnvConfig& env, const PersonaCorpus& corpus, int trials,
                               int warmup, uint64_t seed);

// --- Aggregate report ------------------------------------------------------------

struct MetricsReport {
  int n_personas = 0;
  int n_trajectories = 0;
  double chance_level = 0.0;
  double zs_top1 = 0.0, zs_top3 = 0.0;
  WilsonInterval zs_top1_ci, zs_top3_ci;
  double mean_pairwise_kl = 0.0;
  double spearman = 0.0;
  bool spearman_defined = false;  // false: constant axis (reported, not silently 0)
  double coherence = 0.0;
  double coherence_intra = 0.0;
  double coherence_inter = 0.0;
  bool coherence_valid = false;
  double eval_return = 0.0;  // mean target-agent episode return in the knn rollouts
  bool has_latency = false;  // latency is only populated by the bench path
  LatencyStats latency;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row(const std::string& run_label) const;
};

struct EvalOptions {
  int episodes_per_persona = 5;
  int kl_pairs = 100;
  int kl_states = 200;
  uint64_t seed = 0;
};

// Runs the deterministic metric set (no latency) against the held-out split.
MetricsReport run_full_eval(const AgentModel& model, const RawEmbeddingSet& raws,
                            const EnvConfig& env, const PersonaCorpus& corpus,
                            const CorpusSplit& split, const EvalOptions& opts,
                            KnnResult* knn_out = nullptr, PairwiseKlResult* kl_out = nullptr);

}  // namespace personarl
