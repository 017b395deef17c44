#include "personarl/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace personarl {

namespace fs = std::filesystem;
using nlohmann::json;

// --- Presets ------------------------------------------------------------------

PresetSpec preset_spec(const std::string& preset) {
  if (preset == "v1") return {6, 6, 4, 1, 15, 20, 20};
  if (preset == "v2") return {12, 12, 16, 1, 20, 25, 56};
  if (preset == "v3") return {6, 6, 4, 3, 15, 20, 33};
  if (preset == "v3-large") return {12, 12, 16, 3, 20, 25, 69};
  throw ConfigError("preset: unknown preset '" + preset +
                    "' (expected v1, v2, v3 or v3-large)");
}

// --- Config validation --------------------------------------------------------

namespace {

bool valid_preset(const std::string& p) {
  return p == "v1" || p == "v2" || p == "v3" || p == "v3-large";
}
bool valid_ablation(const std::string& a) {
  return a == "full" || a == "no_consist" || a == "no_diverse" || a == "concat";
}
bool valid_split(const std::string& s) {
  return s == "unseen_occupation" || s == "unseen_archetype" || s == "cross";
}
bool valid_provider(const std::string& p) {
  return p == "synthetic" || p == "constant" || p == "file";
}
bool valid_baseline(const std::string& b) { return b == "none" || b == "b1" || b == "b3"; }

std::string join_errors(const std::vector<std::string>& errs) {
  std::string out = "invalid experiment config:";
  for (const auto& e : errs) out += "\n  - " + e;
  return out;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt4(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

namespace {
void validate_into(const ExperimentConfig& cfg, std::vector<std::string>& errs);
}  // namespace

void ExperimentConfig::validate() const {
  std::vector<std::string> errs;
  validate_into(*this, errs);
  if (!errs.empty()) throw ConfigError(join_errors(errs));
}

namespace {
void validate_into(const ExperimentConfig& cfg, std::vector<std::string>& errs) {
  const auto& preset = cfg.preset;
  const auto& ablation = cfg.ablation;
  const auto& split_kind = cfg.split_kind;
  const auto& embedding_provider = cfg.embedding_provider;
  const auto& baseline = cfg.baseline;
  const auto& seeds = cfg.seeds;
  const auto& out_dir = cfg.out_dir;
  const int iterations = cfg.iterations;
  const int checkpoint_every = cfg.checkpoint_every;
  const int embedding_dim = cfg.embedding_dim;
  const double occupation_bias = cfg.occupation_bias;
  const double embedding_noise = cfg.embedding_noise;
  const auto& embedding_file = cfg.embedding_file;
  const int eval_episodes_per_persona = cfg.eval_episodes_per_persona;
  const int eval_kl_pairs = cfg.eval_kl_pairs;
  const int eval_kl_states = cfg.eval_kl_states;
  const int episode_length = cfg.episode_length;
  const int batch_steps = cfg.batch_steps;
  const int minibatch_size = cfg.minibatch_size;
  const int ppo_epochs = cfg.ppo_epochs;
  const int archetypes_override = cfg.archetypes_override;
  const int occupations_override = cfg.occupations_override;
  const auto& heldout_occupations = cfg.heldout_occupations;
  const auto& heldout_archetypes = cfg.heldout_archetypes;
  if (!valid_preset(preset)) errs.push_back("preset: unknown preset '" + preset + "'");
  if (!valid_ablation(ablation))
    errs.push_back("ablation: unknown ablation '" + ablation +
                   "' (expected full, no_consist, no_diverse or concat)");
  if (!valid_split(split_kind))
    errs.push_back("split.kind: unknown kind '" + split_kind +
                   "' (expected unseen_occupation, unseen_archetype or cross)");
  if (!valid_provider(embedding_provider))
    errs.push_back("embedding.provider: unknown provider '" + embedding_provider +
                   "' (expected synthetic, constant or file)");
  if (!valid_baseline(baseline))
    errs.push_back("baseline: unknown baseline '" + baseline + "' (expected none, b1 or b3)");

  if (seeds.empty()) errs.push_back("seeds: must be non-empty");
  std::set<uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) errs.push_back("seeds: entries must be distinct");
  if (out_dir.empty()) errs.push_back("out_dir: must be non-empty");
  if (iterations < 1) errs.push_back("iterations: must be >= 1");
  if (checkpoint_every < 1) errs.push_back("checkpoint_every: must be >= 1");

  if (embedding_dim < kEmbedDim)
    errs.push_back("embedding.dim: must be >= " + std::to_string(kEmbedDim));
  if (occupation_bias < 0.0 || occupation_bias > 1.0)
    errs.push_back("embedding.occupation_bias: must be in [0, 1]");
  if (embedding_noise < 0.0) errs.push_back("embedding.noise_scale: must be >= 0");
  if (embedding_provider == "file" && embedding_file.empty())
    errs.push_back("embedding.file: required when provider is 'file'");

  if (eval_episodes_per_persona < 1) errs.push_back("eval.episodes_per_persona: must be >= 1");
  if (eval_kl_pairs < 10) errs.push_back("eval.kl_pairs: must be >= 10 (alignment minimum)");
  if (eval_kl_states < 1) errs.push_back("eval.kl_states: must be >= 1");

  if (episode_length < 1) errs.push_back("overrides.episode_length: must be >= 1");
  if (batch_steps < 1) errs.push_back("overrides.batch_steps: must be >= 1");
  if (minibatch_size < 1) errs.push_back("overrides.minibatch_size: must be >= 1");
  if (ppo_epochs < 1) errs.push_back("overrides.ppo_epochs: must be >= 1");
  if (archetypes_override < 0) errs.push_back("overrides.archetypes: must be >= 0");
  if (occupations_override < 0) errs.push_back("overrides.occupations: must be >= 0");

  // Split membership checks against the effective corpus shape.
  if (valid_preset(preset)) {
    PresetSpec spec = preset_spec(preset);
    int arch = archetypes_override > 0 ? archetypes_override : spec.archetypes;
    int occ = occupations_override > 0 ? occupations_override : spec.occupations;
    bool need_occ = split_kind == "unseen_occupation" || split_kind == "cross";
    bool need_arch = split_kind == "unseen_archetype" || split_kind == "cross";
    if (need_occ) {
      if (heldout_occupations.empty())
        errs.push_back("split.heldout_occupations: must be non-empty for kind '" + split_kind +
                       "'");
      for (int o : heldout_occupations)
        if (o < 0 || o >= occ)
          errs.push_back("split.heldout_occupations: id " + std::to_string(o) +
                         " outside [0, " + std::to_string(occ) + ")");
      if ((int)heldout_occupations.size() >= occ)
        errs.push_back("split.heldout_occupations: would leave no train occupations");
    }
    if (need_arch) {
      if (heldout_archetypes.empty())
        errs.push_back("split.heldout_archetypes: must be non-empty for kind '" + split_kind +
                       "'");
      for (int a : heldout_archetypes)
        if (a < 0 || a >= arch)
          errs.push_back("split.heldout_archetypes: id " + std::to_string(a) + " outside [0, " +
                         std::to_string(arch) + ")");
      if ((int)heldout_archetypes.size() >= arch)
        errs.push_back("split.heldout_archetypes: would leave no train archetypes");
    }
  }
}
}  // namespace

std::string ExperimentConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["ablation"] = ablation;
  j["split"] = {{"kind", split_kind},
                {"heldout_occupations", heldout_occupations},
                {"heldout_archetypes", heldout_archetypes}};
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["iterations"] = iterations;
  j["checkpoint_every"] = checkpoint_every;
  j["embedding"] = {{"provider", embedding_provider}, {"dim", embedding_dim},
                    {"occupation_bias", occupation_bias}, {"noise_scale", embedding_noise},
                    {"seed", embedding_seed},           {"file", embedding_file}};
  j["baseline"] = baseline;
  j["corpus_seed"] = corpus_seed;
  j["eval"] = {{"episodes_per_persona", eval_episodes_per_persona},
               {"kl_pairs", eval_kl_pairs},
               {"kl_states", eval_kl_states},
               {"seed", eval_seed}};
  j["overrides"] = {{"episode_length", episode_length},
                    {"batch_steps", batch_steps},
                    {"minibatch_size", minibatch_size},
                    {"ppo_epochs", ppo_epochs},
                    {"archetypes", archetypes_override},
                    {"occupations", occupations_override},
                    {"projection_consist_only", projection_consist_only}};
  return j.dump();
}

// --- Config parsing -----------------------------------------------------------

namespace {

// Typed field extraction that records an error instead of throwing, so a bad
// config reports every problem at once.
struct FieldReader {
  const json& obj;
  std::string prefix;
  std::vector<std::string>& errs;
  std::set<std::string> seen;

  const json* get(const std::string& key) {
    seen.insert(key);
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }
  void read_string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else errs.push_back(prefix + key + ": expected a string");
    }
  }
  void read_int(const std::string& key, int& out) {
    if (const json* v = get(key)) {
      if (v->is_number_integer()) out = v->get<int>();
      else errs.push_back(prefix + key + ": expected an integer");
    }
  }
  void read_u64(const std::string& key, uint64_t& out) {
    if (const json* v = get(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<int64_t>() >= 0))
        out = v->get<uint64_t>();
      else errs.push_back(prefix + key + ": expected a non-negative integer");
    }
  }
  void read_double(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (v->is_number()) out = v->get<double>();
      else errs.push_back(prefix + key + ": expected a number");
    }
  }
  void read_bool(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else errs.push_back(prefix + key + ": expected a boolean");
    }
  }
  void read_int_list(const std::string& key, std::vector<int>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) {
        errs.push_back(prefix + key + ": expected an array of integers");
        return;
      }
      out.clear();
      for (size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if (e.is_number_integer()) out.push_back(e.get<int>());
        else errs.push_back(prefix + key + "[" + std::to_string(i) + "]: expected an integer");
      }
    }
  }
  void read_u64_list(const std::string& key, std::vector<uint64_t>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) {
        errs.push_back(prefix + key + ": expected an array of non-negative integers");
        return;
      }
      out.clear();
      for (size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if (e.is_number_unsigned() || (e.is_number_integer() && e.get<int64_t>() >= 0))
          out.push_back(e.get<uint64_t>());
        else
          errs.push_back(prefix + key + "[" + std::to_string(i) +
                         "]: expected a non-negative integer");
      }
    }
  }
  void finish() {
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!seen.count(it.key())) errs.push_back(prefix + it.key() + ": unknown key");
  }
};

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: not valid JSON (") + e.what() +
                      ")");
  }
  if (!root.is_object()) throw ConfigError("invalid experiment config: top level must be an object");

  ExperimentConfig cfg;
  std::vector<std::string> errs;
  FieldReader top{root, "", errs, {}};
  top.read_string("preset", cfg.preset);
  top.read_string("ablation", cfg.ablation);
  top.read_u64_list("seeds", cfg.seeds);
  top.read_string("out_dir", cfg.out_dir);
  top.read_int("iterations", cfg.iterations);
  top.read_int("checkpoint_every", cfg.checkpoint_every);
  top.read_string("baseline", cfg.baseline);
  top.read_u64("corpus_seed", cfg.corpus_seed);

  if (const json* split = top.get("split")) {
    if (!split->is_object()) {
      errs.push_back("split: expected an object");
    } else {
      FieldReader r{*split, "split.", errs, {}};
      r.read_string("kind", cfg.split_kind);
      r.read_int_list("heldout_occupations", cfg.heldout_occupations);
      r.read_int_list("heldout_archetypes", cfg.heldout_archetypes);
      r.finish();
    }
  }
  if (const json* emb = top.get("embedding")) {
    if (!emb->is_object()) {
      errs.push_back("embedding: expected an object");
    } else {
      FieldReader r{*emb, "embedding.", errs, {}};
      r.read_string("provider", cfg.embedding_provider);
      r.read_int("dim", cfg.embedding_dim);
      r.read_double("occupation_bias", cfg.occupation_bias);
      r.read_double("noise_scale", cfg.embedding_noise);
      r.read_u64("seed", cfg.embedding_seed);
      r.read_string("file", cfg.embedding_file);
      r.finish();
    }
  }
  if (const json* ev = top.get("eval")) {
    if (!ev->is_object()) {
      errs.push_back("eval: expected an object");
    } else {
      FieldReader r{*ev, "eval.", errs, {}};
      r.read_int("episodes_per_persona", cfg.eval_episodes_per_persona);
      r.read_int("kl_pairs", cfg.eval_kl_pairs);
      r.read_int("kl_states", cfg.eval_kl_states);
      r.read_u64("seed", cfg.eval_seed);
      r.finish();
    }
  }
  if (const json* ov = top.get("overrides")) {
    if (!ov->is_object()) {
      errs.push_back("overrides: expected an object");
    } else {
      FieldReader r{*ov, "overrides.", errs, {}};
      r.read_int("episode_length", cfg.episode_length);
      r.read_int("batch_steps", cfg.batch_steps);
      r.read_int("minibatch_size", cfg.minibatch_size);
      r.read_int("ppo_epochs", cfg.ppo_epochs);
      r.read_int("archetypes", cfg.archetypes_override);
      r.read_int("occupations", cfg.occupations_override);
      r.read_bool("projection_consist_only", cfg.projection_consist_only);
      r.finish();
    }
  }
  top.finish();

  validate_into(cfg, errs);
  if (!errs.empty()) throw ConfigError(join_errors(errs));
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

// --- Context ------------------------------------------------------------------

ExperimentContext build_context(const ExperimentConfig& cfg) {
  cfg.validate();
  PresetSpec spec = preset_spec(cfg.preset);

  ExperimentContext ctx;
  ctx.env.grid_w = spec.grid_w;
  ctx.env.grid_h = spec.grid_h;
  ctx.env.n_agents = spec.n_agents;
  ctx.env.episode_length = cfg.episode_length;
  ctx.env.ontology = ActionOntology::by_version(spec.ontology_version);
  ctx.env.validate();

  // Startup observation-layout assertion: the preset pins the expected
  // dimension; any drift aborts before training.
  int obs = observation_dim(ctx.env);
  if (obs != spec.expected_obs_dim)
    throw StateError("observation layout drift: preset " + cfg.preset + " expects dim " +
                     std::to_string(spec.expected_obs_dim) + " but the environment produces " +
                     std::to_string(obs));

  int arch = cfg.archetypes_override > 0 ? cfg.archetypes_override : spec.archetypes;
  int occ = cfg.occupations_override > 0 ? cfg.occupations_override : spec.occupations;
  ctx.corpus = generate_corpus(arch, occ, cfg.corpus_seed, ctx.env.ontology);

  if (cfg.baseline == "b1") {
    ctx.raws = constant_embeddings(ctx.corpus, cfg.embedding_dim);
  } else if (cfg.baseline == "b3") {
    SyntheticEmbedderConfig ec;
    ec.dim = 384;
    ec.occupation_bias = cfg.occupation_bias;
    ec.noise_scale = cfg.embedding_noise;
    ec.seed = cfg.embedding_seed;
    ctx.raws = embed_corpus(ctx.corpus, ec);
  } else if (cfg.embedding_provider == "synthetic") {
    SyntheticEmbedderConfig ec;
    ec.dim = cfg.embedding_dim;
    ec.occupation_bias = cfg.occupation_bias;
    ec.noise_scale = cfg.embedding_noise;
    ec.seed = cfg.embedding_seed;
    ctx.raws = embed_corpus(ctx.corpus, ec);
  } else if (cfg.embedding_provider == "constant") {
    ctx.raws = constant_embeddings(ctx.corpus, cfg.embedding_dim);
  } else {
    ctx.raws = load_embeddings(cfg.embedding_file);
    ctx.raws.require_cover(ctx.corpus);
  }

  if (cfg.split_kind == "unseen_occupation")
    ctx.split = split_unseen_occupation(ctx.corpus, cfg.heldout_occupations);
  else if (cfg.split_kind == "unseen_archetype")
    ctx.split = split_unseen_archetype(ctx.corpus, cfg.heldout_archetypes);
  else
    ctx.split = split_cross(ctx.corpus, cfg.heldout_occupations, cfg.heldout_archetypes);
  ctx.split.validate(ctx.corpus);

  ctx.train.env = ctx.env;
  ctx.train.ablation = ablation_from_name(cfg.ablation);
  ctx.train.ppo_epochs = cfg.ppo_epochs;
  ctx.train.minibatch_size = cfg.minibatch_size;
  ctx.train.batch_steps = cfg.batch_steps;
  ctx.train.projection_consist_only = cfg.projection_consist_only;
  if (cfg.baseline == "b1") {
    // Constant conditioning with the auxiliary losses disabled.
    ctx.train.lambda1 = 0.0;
    ctx.train.lambda2 = 0.0;
  }
  ctx.train.validate();
  return ctx;
}

// --- Single run -----------------------------------------------------------------

namespace {

std::string run_name_for(const ExperimentConfig& cfg, uint64_t seed) {
  std::string name = cfg.preset;
  if (cfg.baseline != "none") name += "-" + cfg.baseline;
  name += "-" + cfg.ablation + "-seed" + std::to_string(seed);
  return name;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot write " + path);
  out << text;
  if (!out) throw StateError("failed writing " + path);
}

}  // namespace

RunRecord run_single(const ExperimentConfig& cfg, uint64_t seed) {
  ExperimentContext ctx = build_context(cfg);
  TrainConfig tc = ctx.train;
  tc.seed = seed;
  tc.validate();

  RunRecord rec;
  rec.run_name = run_name_for(cfg, seed);
  rec.preset = cfg.preset;
  rec.ablation = cfg.ablation;
  rec.baseline = cfg.baseline;
  rec.seed = seed;
  rec.iterations = cfg.iterations;

  fs::path dir = fs::path(cfg.out_dir) / rec.run_name;
  fs::create_directories(dir);
  rec.dir = dir.string();
  rec.checkpoint_path = (dir / "checkpoint.bin").string();
  rec.metrics_path = (dir / "metrics.jsonl").string();
  rec.report_path = (dir / "report.json").string();
  rec.manifest_path = (dir / "manifest.json").string();

  // Inputs are materialized into the run directory so every run is
  // self-contained and hashable.
  save_corpus_jsonl(ctx.corpus, (dir / "corpus.jsonl").string());
  save_embeddings_binary(ctx.raws, (dir / "embeddings.bin").string());
  save_split_json(ctx.split, (dir / "split.json").string());

  Trainer trainer(tc, ctx.corpus, ctx.raws, ctx.split.train_ids);
  trainer.diagnostic_path = (dir / "diagnostic_checkpoint.bin").string();

  // Resume from the latest checkpoint when present; metrics lines beyond the
  // checkpoint iteration are dropped so the stream matches the restored state.
  std::vector<std::string> metric_lines;
  if (fs::exists(rec.checkpoint_path)) {
    trainer.load_checkpoint(rec.checkpoint_path);
    int k = trainer.iteration();
    if (k > cfg.iterations)
      throw StateError("checkpoint at iteration " + std::to_string(k) +
                       " is beyond the requested " + std::to_string(cfg.iterations));
    metric_lines = read_lines(rec.metrics_path);
    if ((int)metric_lines.size() < k)
      throw StateError("metrics stream at " + rec.metrics_path + " has " +
                       std::to_string(metric_lines.size()) +
                       " lines, fewer than the checkpoint iteration " + std::to_string(k));
    metric_lines.resize(k);
  }
  for (const auto& line : metric_lines) {
    json j = json::parse(line);
    rec.reward_curve.push_back(j.at("mean_return").get<double>());
  }

  {
    std::ofstream out(rec.metrics_path, std::ios::binary | std::ios::trunc);
    for (const auto& line : metric_lines) out << line << "\n";
  }
  std::ofstream mout(rec.metrics_path, std::ios::binary | std::ios::app);
  while (trainer.iteration() < cfg.iterations) {
    IterationMetrics m = trainer.run_iteration();
    mout << m.to_json() << "\n";
    mout.flush();
    rec.reward_curve.push_back(m.mean_return);
    if (trainer.iteration() % cfg.checkpoint_every == 0)
      trainer.save_checkpoint(rec.checkpoint_path);
  }
  mout.close();
  trainer.save_checkpoint(rec.checkpoint_path);

  int quarter = std::max(1, cfg.iterations / 4);
  double acc = 0.0;
  for (int i = cfg.iterations - quarter; i < cfg.iterations; ++i) acc += rec.reward_curve[i];
  rec.train_reward = acc / quarter;

  // Evaluation.
  EvalOptions eo;
  eo.episodes_per_persona = cfg.eval_episodes_per_persona;
  eo.kl_pairs = cfg.eval_kl_pairs;
  eo.kl_states = cfg.eval_kl_states;
  eo.seed = cfg.eval_seed;
  rec.report = run_full_eval(trainer.model(), ctx.raws, ctx.env, ctx.corpus, ctx.split, eo,
                             &rec.knn, &rec.kl);

  // Alignment under the seed-initial projection: same behavioral
  // measurements, freshly initialized projection weights.
  AgentModel init_model = init_agent(ctx.env, ctx.raws.dim, tc.effective_mode(), seed);
  try {
    rec.init_spearman = spearman_alignment(rec.kl, init_model.projection, ctx.raws);
    rec.init_spearman_defined = true;
  } catch (const UndefinedCorrelationError&) {
    rec.init_spearman = 0.0;
    rec.init_spearman_defined = false;
  }

  // Plot-ready artifacts.
  {
    std::ostringstream os;
    os << "iteration,mean_return\n";
    for (size_t i = 0; i < rec.reward_curve.size(); ++i)
      os << i << ',' << fmt17(rec.reward_curve[i]) << "\n";
    write_text((dir / "reward_curve.csv").string(), os.str());
  }
  {
    std::map<int, std::pair<int, int>> per;  // persona -> (episodes, top1 successes)
    for (const auto& r : rec.knn.records) {
      auto& e = per[r.target_persona];
      e.first += 1;
      if (r.target_rank == 1) e.second += 1;
    }
    std::ostringstream os;
    os << "persona_id,archetype_id,occupation_id,episodes,top1_successes,top1_rate\n";
    for (const auto& [pid, e] : per) {
      const PersonaRecord& p = ctx.corpus.by_id(pid);
      os << pid << ',' << p.archetype_id << ',' << p.occupation_id << ',' << e.first << ','
         << e.second << ',' << fmt17(e.first > 0 ? double(e.second) / e.first : 0.0) << "\n";
    }
    write_text((dir / "accuracy_bars.csv").string(), os.str());
  }
  {
    std::ostringstream os;
    os << "persona_p,persona_q,embedding_distance,behavioral_kl\n";
    for (size_t i = 0; i < rec.kl.pairs.size(); ++i) {
      Vec ep = conditioning(trainer.model(), ctx.raws, rec.kl.pairs[i][0]);
      Vec eq = conditioning(trainer.model(), ctx.raws, rec.kl.pairs[i][1]);
      os << rec.kl.pairs[i][0] << ',' << rec.kl.pairs[i][1] << ',' << fmt17((ep - eq).norm())
         << ',' << fmt17(rec.kl.per_pair(Eigen::Index(i))) << "\n";
    }
    write_text((dir / "distance_kl_scatter.csv").string(), os.str());
  }
  {
    // One greedy showcase episode (held-out personas when enough exist).
    const std::vector<int>& pool =
        (int)ctx.split.heldout_ids.size() >= ctx.env.n_agents ? ctx.split.heldout_ids
                                                              : ctx.split.train_ids;
    std::vector<int> personas(pool.begin(), pool.begin() + ctx.env.n_agents);
    ActorFn actor = make_actor(trainer.model(), ctx.raws);
    std::vector<Trajectory> trajs = rollout(ctx.env, ctx.corpus, personas, actor,
                                            mix_seed(cfg.eval_seed, 0xD07), false, true);
    dump_trajectories_jsonl(trajs, (dir / "trajectories.jsonl").string());
  }

  // Run report.
  {
    json j;
    j["run_name"] = rec.run_name;
    j["preset"] = rec.preset;
    j["ablation"] = rec.ablation;
    j["baseline"] = rec.baseline;
    j["seed"] = rec.seed;
    j["iterations"] = rec.iterations;
    j["train_reward"] = rec.train_reward;
    j["init_spearman"] = rec.init_spearman;
    j["init_spearman_defined"] = rec.init_spearman_defined;
    j["metrics"] = json::parse(rec.report.to_json());
    write_text(rec.report_path, j.dump(2) + "\n");
  }

  // Manifest with content hashes over every artifact; the manifest hash is
  // the run's identity in cross-run tables.
  {
    json files;
    for (const char* name :
         {"corpus.jsonl", "embeddings.bin", "split.json", "checkpoint.bin", "metrics.jsonl",
          "report.json", "reward_curve.csv", "accuracy_bars.csv", "distance_kl_scatter.csv",
          "trajectories.jsonl"})
      files[name] = hash_hex(fnv1a64_file((dir / name).string()));
    json j;
    j["run_name"] = rec.run_name;
    j["seed"] = rec.seed;
    j["config"] = json::parse(cfg.to_json());
    j["train_config"] = json::parse(tc.to_json());
    j["obs_dim"] = observation_dim(ctx.env);
    j["param_count"] = count_params(trainer.model());
    j["files"] = files;
    j["constants"] = {{"persona", hash_hex(fnv1a64(persona_constants_dump()))},
                      {"ontology", hash_hex(fnv1a64(ontology_constants_dump(ctx.env.ontology)))}};
    write_text(rec.manifest_path, j.dump(2) + "\n");
  }
  rec.record_hash = hash_hex(fnv1a64_file(rec.manifest_path));
  return rec;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<RunRecord> records;
  for (uint64_t seed : cfg.seeds) records.push_back(run_single(cfg, seed));
  emit_report(records, cfg.out_dir);
  return records;
}

// --- Ablation matrix --------------------------------------------------------------

AblationTable run_ablation_matrix(const ExperimentConfig& base,
                                  const std::vector<std::string>& ablations,
                                  const std::vector<uint64_t>& seeds) {
  base.validate();
  if (ablations.size() < 2)
    throw ConfigError("ablation matrix requires at least 2 ablations, got " +
                      std::to_string(ablations.size()));
  std::set<std::string> uniq(ablations.begin(), ablations.end());
  if (uniq.size() != ablations.size())
    throw ConfigError("ablation matrix: ablation names must be distinct");
  for (const auto& a : ablations) ablation_from_name(a);  // ConfigError on unknown
  if (seeds.empty()) throw ConfigError("ablation matrix requires at least one seed");

  AblationTable table;
  for (const auto& abl : ablations) {
    ExperimentConfig cfg = base;
    cfg.ablation = abl;
    cfg.seeds = seeds;

    AblationRow row;
    row.ablation = abl;
    std::vector<double> rewards, kls;
    for (uint64_t seed : seeds) {
      RunRecord rec = run_single(cfg, seed);
      row.runs += 1;
      rewards.push_back(rec.train_reward);
      kls.push_back(rec.report.mean_pairwise_kl);
      row.top1_successes += rec.knn.top1_successes;
      row.top3_successes += rec.knn.top3_successes;
      row.n += rec.knn.n;
      row.rho_mean += rec.report.spearman_defined ? rec.report.spearman : 0.0;
      row.coherence_mean += rec.report.coherence;
      row.chance_level = rec.report.chance_level;
      row.record_hashes.push_back(rec.record_hash);
      table.records.push_back(std::move(rec));
    }
    auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
      mean = 0.0;
      for (double x : xs) mean += x;
      mean /= double(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      sd = std::sqrt(var / double(xs.size()));
    };
    mean_std(rewards, row.reward_mean, row.reward_std);
    mean_std(kls, row.kl_mean, row.kl_std);
    row.rho_mean /= double(row.runs);
    row.coherence_mean /= double(row.runs);
    row.top1 = double(row.top1_successes) / double(row.n);
    row.top3 = double(row.top3_successes) / double(row.n);
    row.top1_ci = wilson_interval(row.top1_successes, row.n);
    row.top3_ci = wilson_interval(row.top3_successes, row.n);
    row.reproduced_collapse =
        row.top1_ci.low <= row.chance_level && row.chance_level <= row.top1_ci.high;
    table.rows.push_back(std::move(row));
  }

  // Reward deltas are recorded against the 'full' row when present; the sign
  // is reported, not asserted.
  const AblationRow* full_row = nullptr;
  for (const auto& r : table.rows)
    if (r.ablation == "full") full_row = &r;

  fs::create_directories(base.out_dir);
  std::ostringstream os;
  os << "ablation,runs,train_reward_mean,train_reward_std,reward_delta_vs_full,"
        "zs_top1,zs_top1_lo,zs_top1_hi,zs_top3,zs_top3_lo,zs_top3_hi,chance,"
        "mean_pairwise_kl,kl_std,spearman_mean,coherence_mean,reproduced_collapse,"
        "n_eval,record_hashes\n";
  for (const auto& r : table.rows) {
    os << r.ablation << ',' << r.runs << ',' << fmt17(r.reward_mean) << ','
       << fmt17(r.reward_std) << ',';
    if (full_row != nullptr && r.ablation != "full")
      os << fmt17(r.reward_mean - full_row->reward_mean);
    os << ',' << fmt17(r.top1) << ',' << fmt17(r.top1_ci.low) << ',' << fmt17(r.top1_ci.high)
       << ',' << fmt17(r.top3) << ',' << fmt17(r.top3_ci.low) << ',' << fmt17(r.top3_ci.high)
       << ',' << fmt17(r.chance_level) << ',' << fmt17(r.kl_mean) << ',' << fmt17(r.kl_std)
       << ',' << fmt17(r.rho_mean) << ',' << fmt17(r.coherence_mean) << ','
       << (r.reproduced_collapse ? 1 : 0) << ',' << r.n << ',';
    for (size_t i = 0; i < r.record_hashes.size(); ++i)
      os << (i ? ";" : "") << r.record_hashes[i];
    os << "\n";
  }
  table.csv_path = (fs::path(base.out_dir) / "ablation_matrix.csv").string();
  write_text(table.csv_path, os.str());

  emit_report(table.records, base.out_dir);
  return table;
}

// --- Report -----------------------------------------------------------------------

void emit_report(const std::vector<RunRecord>& records, const std::string& out_dir) {
  if (records.empty()) throw ConfigError("emit_report: no run records");
  fs::create_directories(out_dir);

  std::ostringstream csv;
  csv << MetricsReport::csv_header()
      << ",train_reward,init_spearman,init_spearman_defined,record_hash\n";
  for (const auto& r : records)
    csv << r.report.csv_row(r.run_name) << ',' << fmt17(r.train_reward) << ','
        << fmt17(r.init_spearman) << ',' << (r.init_spearman_defined ? 1 : 0) << ','
        << r.record_hash << "\n";
  write_text((fs::path(out_dir) / "runs.csv").string(), csv.str());

  std::ostringstream md;
  md << "# Experiment report\n\n";
  md << "| run | train reward | zs top-1 [95% CI] | chance | mean KL | rho (trained/init) | "
        "coherence | hash |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : records) {
    md << "| " << r.run_name << " | " << fmt4(r.train_reward) << " | " << fmt4(r.report.zs_top1)
       << " [" << fmt4(r.report.zs_top1_ci.low) << ", " << fmt4(r.report.zs_top1_ci.high)
       << "] | " << fmt4(r.report.chance_level) << " | " << fmt4(r.report.mean_pairwise_kl)
       << " | " << (r.report.spearman_defined ? fmt4(r.report.spearman) : std::string("undef"))
       << " / " << (r.init_spearman_defined ? fmt4(r.init_spearman) : std::string("undef"))
       << " | "
       << (r.report.coherence_valid ? fmt4(r.report.coherence) : std::string("non-ratio"))
       << " | " << r.record_hash << " |\n";
  }
  md << "\n";
  bool any_flag = false;
  for (const auto& r : records) {
    bool contains = r.report.zs_top1_ci.low <= r.report.chance_level &&
                    r.report.chance_level <= r.report.zs_top1_ci.high;
    if (r.ablation == "no_consist" && contains) {
      if (!any_flag) md << "## Flags\n\n";
      any_flag = true;
      md << "- REPRODUCED-COLLAPSE: " << r.run_name << " top-1 CI ["
         << fmt4(r.report.zs_top1_ci.low) << ", " << fmt4(r.report.zs_top1_ci.high)
         << "] contains chance " << fmt4(r.report.chance_level) << "\n";
    }
  }
  if (!any_flag) md << "No collapse flags: every no_consist CI excludes chance.\n";
  md << "\nEvery table number traces to a run directory via its manifest hash.\n";
  write_text((fs::path(out_dir) / "report.md").string(), md.str());
}

}  // namespace personarl
