#pragma once

// Experiment driver: preset-based configuration, a resumable single-run
// pipeline (corpus -> embeddings -> split -> train -> eval -> artifacts), the
// ablation matrix, and report emission. Every artifact is content-hashed and
// timestamp-free so identical configs reproduce identical bytes.

#include "personarl/metrics.hpp"
#include "personarl/train.hpp"

#include <string>
#include <vector>

namespace personarl {

// Presets fix grid, agent count, ontology and corpus shape:
//   v1       6x6,   4 agents,  ontology v1, 15x20 personas, obs dim 20
//   v2       12x12, 16 agents, ontology v1, 20x25 personas, obs dim 56
//   v3       6x6,   4 agents,  ontology v3, 15x20 personas, obs dim 33
//   v3-large 12x12, 16 agents, ontology v3, 20x25 personas, obs dim 69
struct PresetSpec {
  int grid_w = 0, grid_h = 0, n_agents = 0;
  int ontology_version = 1;
  int archetypes = 0, occupations = 0;
  int expected_obs_dim = 0;
};
PresetSpec preset_spec(const std::string& preset);

struct ExperimentConfig {
  std::string preset = "v1";
  std::string ablation = "full";
  std::string split_kind = "unseen_occupation";
  std::vector<int> heldout_occupations = {0, 1, 2, 3};
  std::vector<int> heldout_archetypes;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "runs";
  int iterations = 150;
  int checkpoint_every = 50;

  // Embedding provider: synthetic (seeded), constant (no-persona), or a file.
  std::string embedding_provider = "synthetic";
  int embedding_dim = kDefaultRawDim;
  double occupation_bias = 0.7;
  double embedding_noise = 0.05;
  uint64_t embedding_seed = 7;
  std::string embedding_file;

  // Baselines: none | b1 (constant conditioning, auxiliary losses off) |
  // b3 (synthetic embedder at dim 384, own projection).
  std::string baseline = "none";

  uint64_t corpus_seed = 42;

  // Evaluation protocol.
  int eval_episodes_per_persona = 5;
  int eval_kl_pairs = 100;
  int eval_kl_states = 200;
  uint64_t eval_seed = 1000;

  // Scale overrides (0 = preset/training default). Grid, agents and ontology
  // are preset-fixed and not overridable.
  int episode_length = 128;
  int batch_steps = 2048;
  int minibatch_size = 256;
  int ppo_epochs = 4;
  int archetypes_override = 0;
  int occupations_override = 0;
  bool projection_consist_only = false;

  void validate() const;        // throws ConfigError listing all field errors
  std::string to_json() const;  // canonical dump
};

// Parses and validates a JSON config, collecting every field-path error into
// one ConfigError. Unknown keys are errors.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

struct RunRecord {
  std::string run_name;  // <preset>[-<baseline>]-<ablation>-seed<seed>
  std::string dir;
  std::string preset, ablation, baseline;
  uint64_t seed = 0;
  int iterations = 0;
  std::string manifest_path, checkpoint_path, metrics_path, report_path;
  MetricsReport report;
  KnnResult knn;
  PairwiseKlResult kl;
  std::vector<double> reward_curve;  // per-iteration mean rollout return
  double train_reward = 0.0;         // mean over the last quarter of iterations
  double init_spearman = 0.0;        // alignment under the seed-initial projection
  bool init_spearman_defined = false;
  std::string record_hash;           // content hash over the run manifest
};

// Builds the full environment/corpus/embedding/split context for a config.
struct ExperimentContext {
  EnvConfig env;
  PersonaCorpus corpus;
  RawEmbeddingSet raws;
  CorpusSplit split;
  TrainConfig train;  // seed filled per run
};
ExperimentContext build_context(const ExperimentConfig& cfg);

// One seeded run, resumable from <dir>/checkpoint.bin. Writes metrics.jsonl,
// checkpoint.bin, report.json, manifest.json, reward_curve.csv,
// accuracy_bars.csv, distance_kl_scatter.csv and trajectories.jsonl under
// <out_dir>/<run_name>/.
RunRecord run_single(const ExperimentConfig& cfg, uint64_t seed);

// All seeds of the config, plus cross-run report emission into out_dir.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg);

struct AblationRow {
  std::string ablation;
  int runs = 0;
  double reward_mean = 0, reward_std = 0;
  int top1_successes = 0, top3_successes = 0, n = 0;
  double top1 = 0, top3 = 0;
  WilsonInterval top1_ci, top3_ci;  // pooled across seeds
  double kl_mean = 0, kl_std = 0;
  double rho_mean = 0;
  double coherence_mean = 0;
  double chance_level = 0;
  bool reproduced_collapse = false;  // top-1 CI contains chance
  std::vector<std::string> record_hashes;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<RunRecord> records;
  std::string csv_path;
};

// Runs ablations x seeds and emits the comparison CSV. Requires >= 2
// ablations (ConfigError otherwise).
AblationTable run_ablation_matrix(const ExperimentConfig& base,
                                  const std::vector<std::string>& ablations,
                                  const std::vector<uint64_t>& seeds);

// Cross-run CSV + markdown summary with per-run artifact hashes. Requires at
// least one record.
void emit_report(const std::vector<RunRecord>& records, const std::string& out_dir);

}  // namespace personarl
