// Command-line front end: persona corpus generation, embedding, training,
// evaluation, ablation matrices, latency benchmarking and report emission.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical error, 1 other.

#include <CLI11.hpp>
#include <json.hpp>

#include "personarl/experiment.hpp"

#include <filesystem>
#include <iostream>

using namespace personarl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) throw ConfigError("seeds: expected a comma-separated list, got '" + text + "'");
  return seeds;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> names;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) names.push_back(tok);
  }
  return names;
}

void print_run_summary(const RunRecord& rec) {
  json j;
  j["run_name"] = rec.run_name;
  j["dir"] = rec.dir;
  j["record_hash"] = rec.record_hash;
  j["train_reward"] = rec.train_reward;
  j["zs_top1"] = rec.report.zs_top1;
  j["zs_top1_ci"] = {rec.report.zs_top1_ci.low, rec.report.zs_top1_ci.high};
  j["chance_level"] = rec.report.chance_level;
  j["mean_pairwise_kl"] = rec.report.mean_pairwise_kl;
  j["spearman"] = rec.report.spearman;
  j["coherence"] = rec.report.coherence;
  std::cout << j.dump(2) << "\n";
}

// Rebuilds the run's trainer state from its checkpoint (fresh model when no
// checkpoint exists and allow_fresh is set).
Trainer restore_trainer(const ExperimentConfig& cfg, const ExperimentContext& ctx, uint64_t seed,
                        bool allow_fresh) {
  TrainConfig tc = ctx.train;
  tc.seed = seed;
  Trainer trainer(tc, ctx.corpus, ctx.raws, ctx.split.train_ids);
  std::string name = cfg.preset;
  if (cfg.baseline != "none") name += "-" + cfg.baseline;
  name += "-" + cfg.ablation + "-seed" + std::to_string(seed);
  fs::path ckpt = fs::path(cfg.out_dir) / name / "checkpoint.bin";
  if (fs::exists(ckpt)) {
    trainer.load_checkpoint(ckpt.string());
  } else if (!allow_fresh) {
    throw StateError("no checkpoint at " + ckpt.string() + "; train this run first");
  }
  return trainer;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"persona-conditioned shared-policy training and evaluation"};
  app.require_subcommand(1);

  // --- gen-personas ---
  auto* gen = app.add_subcommand("gen-personas", "Generate a persona corpus (JSON lines)");
  int g_arch = 15, g_occ = 20, g_ont = 1;
  uint64_t g_seed = 42;
  std::string g_out = "corpus.jsonl";
  gen->add_option("--archetypes", g_arch, "Archetype count")->capture_default_str();
  gen->add_option("--occupations", g_occ, "Occupation count")->capture_default_str();
  gen->add_option("--ontology", g_ont, "Action ontology version (1 or 3)")->capture_default_str();
  gen->add_option("--seed", g_seed, "Corpus seed")->capture_default_str();
  gen->add_option("--out", g_out, "Output path")->capture_default_str();
  gen->callback([&] {
    PersonaCorpus corpus = generate_corpus(g_arch, g_occ, g_seed, ActionOntology::by_version(g_ont));
    save_corpus_jsonl(corpus, g_out);
    std::cout << "wrote " << corpus.size() << " personas to " << g_out << "\n";
  });

  // --- embed ---
  auto* emb = app.add_subcommand("embed", "Embed a persona corpus");
  std::string e_corpus = "corpus.jsonl", e_out = "embeddings.bin", e_provider = "synthetic";
  int e_dim = kDefaultRawDim;
  double e_bias = 0.7, e_noise = 0.05;
  uint64_t e_seed = 7;
  bool e_jsonl = false;
  emb->add_option("--corpus", e_corpus, "Corpus path")->capture_default_str();
  emb->add_option("--out", e_out, "Output path")->capture_default_str();
  emb->add_option("--provider", e_provider, "synthetic | constant")->capture_default_str();
  emb->add_option("--dim", e_dim, "Embedding dimension")->capture_default_str();
  emb->add_option("--bias", e_bias, "Occupation bias in [0, 1]")->capture_default_str();
  emb->add_option("--noise", e_noise, "Noise scale")->capture_default_str();
  emb->add_option("--seed", e_seed, "Embedder seed")->capture_default_str();
  emb->add_flag("--jsonl", e_jsonl, "Write JSON lines instead of binary");
  emb->callback([&] {
    PersonaCorpus corpus = load_corpus_jsonl(e_corpus);
    RawEmbeddingSet raws;
    if (e_provider == "synthetic") {
      SyntheticEmbedderConfig ec;
      ec.dim = e_dim;
      ec.occupation_bias = e_bias;
      ec.noise_scale = e_noise;
      ec.seed = e_seed;
      raws = embed_corpus(corpus, ec);
    } else if (e_provider == "constant") {
      raws = constant_embeddings(corpus, e_dim);
    } else {
      throw ConfigError("embed: unknown provider '" + e_provider +
                        "' (expected synthetic or constant)");
    }
    if (e_jsonl) save_embeddings_jsonl(raws, e_out);
    else save_embeddings_binary(raws, e_out);
    std::cout << "wrote " << corpus.size() << " embeddings (dim " << raws.dim << ") to " << e_out
              << "\n";
  });

  // --- train ---
  auto* tr = app.add_subcommand("train", "Train (and evaluate) runs from a config");
  std::string t_config;
  std::string t_seed;
  tr->add_option("--config", t_config, "Experiment config JSON path")->required();
  tr->add_option("--seed", t_seed, "Train only this seed (default: all config seeds)");
  tr->callback([&] {
    ExperimentConfig cfg = load_experiment_config(t_config);
    if (!t_seed.empty()) {
      RunRecord rec = run_single(cfg, std::stoull(t_seed));
      print_run_summary(rec);
    } else {
      std::vector<RunRecord> recs = run_experiment(cfg);
      for (const auto& rec : recs) print_run_summary(rec);
      std::cout << "report: " << (fs::path(cfg.out_dir) / "report.md").string() << "\n";
    }
  });

  // --- eval ---
  auto* ev = app.add_subcommand("eval", "Evaluate an existing checkpoint");
  std::string v_config, v_seed;
  ev->add_option("--config", v_config, "Experiment config JSON path")->required();
  ev->add_option("--seed", v_seed, "Run seed")->required();
  ev->callback([&] {
    ExperimentConfig cfg = load_experiment_config(v_config);
    ExperimentContext ctx = build_context(cfg);
    Trainer trainer = restore_trainer(cfg, ctx, std::stoull(v_seed), /*allow_fresh=*/false);
    EvalOptions eo;
    eo.episodes_per_persona = cfg.eval_episodes_per_persona;
    eo.kl_pairs = cfg.eval_kl_pairs;
    eo.kl_states = cfg.eval_kl_states;
    eo.seed = cfg.eval_seed;
    MetricsReport rep = run_full_eval(trainer.model(), ctx.raws, ctx.env, ctx.corpus, ctx.split, eo);
    std::cout << rep.to_json() << "\n";
  });

  // --- ablate ---
  auto* ab = app.add_subcommand("ablate", "Run an ablation matrix");
  std::string a_config, a_ablations = "full,no_consist,no_diverse", a_seeds;
  ab->add_option("--config", a_config, "Experiment config JSON path")->required();
  ab->add_option("--ablations", a_ablations, "Comma-separated ablation names (>= 2)")
      ->capture_default_str();
  ab->add_option("--seeds", a_seeds, "Comma-separated seeds (default: config seeds)");
  ab->callback([&] {
    ExperimentConfig cfg = load_experiment_config(a_config);
    std::vector<uint64_t> seeds = a_seeds.empty() ? cfg.seeds : parse_seed_list(a_seeds);
    AblationTable table = run_ablation_matrix(cfg, parse_name_list(a_ablations), seeds);
    std::cout << "matrix: " << table.csv_path << "\n";
    for (const auto& row : table.rows)
      std::cout << row.ablation << ": top1 " << row.top1 << " [" << row.top1_ci.low << ", "
                << row.top1_ci.high << "] chance " << row.chance_level
                << (row.reproduced_collapse ? "  [collapse]" : "") << "\n";
  });

  // --- bench ---
  auto* be = app.add_subcommand("bench", "Latency benchmark for the batch-1 policy forward");
  std::string b_config, b_seed = "1";
  int b_trials = 2000, b_warmup = 200;
  bool b_fresh = false;
  be->add_option("--config", b_config, "Experiment config JSON path")->required();
  be->add_option("--seed", b_seed, "Run seed")->capture_default_str();
  be->add_option("--trials", b_trials, "Timed trials (>= 1000 for reportable numbers)")
      ->capture_default_str();
  be->add_option("--warmup", b_warmup, "Warmup trials")->capture_default_str();
  be->add_flag("--fresh", b_fresh, "Benchmark a freshly initialized model (no checkpoint)");
  be->callback([&] {
    ExperimentConfig cfg = load_experiment_config(b_config);
    ExperimentContext ctx = build_context(cfg);
    uint64_t seed = std::stoull(b_seed);
    Trainer trainer = restore_trainer(cfg, ctx, seed, /*allow_fresh=*/b_fresh);
    LatencyStats stats = latency_benchmark(trainer.model(), ctx.raws, ctx.env, ctx.corpus,
                                           b_trials, b_warmup, mix_seed(cfg.eval_seed, 0xBE));
    json j;
    j["mean_ms"] = stats.mean_ms;
    j["p95_ms"] = stats.p95_ms;
    j["trials"] = stats.trials;
    j["hardware"] = stats.hardware;
    std::cout << j.dump(2) << "\n";
  });

  // --- report ---
  auto* rp = app.add_subcommand("report", "Re-derive the cross-run report for a config");
  std::string r_config;
  rp->add_option("--config", r_config, "Experiment config JSON path")->required();
  rp->callback([&] {
    ExperimentConfig cfg = load_experiment_config(r_config);
    std::vector<RunRecord> recs = run_experiment(cfg);  // completed runs resume past training
    emit_report(recs, cfg.out_dir);
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "runs.csv").string() << " and "
              << (fs::path(cfg.out_dir) / "report.md").string() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
