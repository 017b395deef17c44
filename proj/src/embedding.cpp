#include "personarl/embedding.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace personarl {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary file formats assume a little-endian host");

void SyntheticEmbedderConfig::validate() const {
  if (dim < kEmbedDim) throw ConfigError("embedding.dim: must be >= 64");
  if (occupation_bias < 0.0 || occupation_bias > 1.0) {
    throw ConfigError("embedding.occupation_bias: must lie in [0, 1]");
  }
  if (noise_scale < 0.0) throw ConfigError("embedding.noise_scale: must be >= 0");
}

const Vec& RawEmbeddingSet::at(int persona_id) const {
  auto it = by_persona.find(persona_id);
  if (it == by_persona.end()) {
    throw ProtocolError("embeddings: no row for persona_id " + std::to_string(persona_id));
  }
  return it->second;
}

void RawEmbeddingSet::require_cover(const PersonaCorpus& corpus) const {
  for (const auto& p : corpus.personas) at(p.persona_id);
}

namespace {

// Deterministic gaussian column keyed by (seed, stream, index).
Vec seeded_gaussian(int dim, uint64_t seed, uint64_t stream, uint64_t index) {
  Rng rng(mix_seed(mix_seed(seed, stream), index));
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v;
}

constexpr uint64_t kStreamTrait = 0x5742ULL;  // W_bf columns
constexpr uint64_t kStreamOcc = 0x574FULL;    // W_occ columns
constexpr uint64_t kStreamNoise = 0x4E4FULL;  // per-persona noise

}  // namespace

Vec synthetic_embed(const PersonaRecord& persona, const SyntheticEmbedderConfig& cfg,
                    int occupation_count) {
  cfg.validate();
  if (persona.occupation_id < 0 || persona.occupation_id >= occupation_count) {
    throw ConfigError("synthetic_embed: occupation_id outside corpus range");
  }
  Vec acc = Vec::Zero(cfg.dim);
  // (1 - bias) * W_bf * big_five, with W_bf columns generated on demand.
  for (int t = 0; t < kTraitCount; ++t) {
    acc += (1.0 - cfg.occupation_bias) * persona.big_five[t] *
           seeded_gaussian(cfg.dim, cfg.seed, kStreamTrait, static_cast<uint64_t>(t));
  }
  // bias * W_occ * onehot(occupation) selects one column.
  acc += cfg.occupation_bias *
         seeded_gaussian(cfg.dim, cfg.seed, kStreamOcc, static_cast<uint64_t>(persona.occupation_id));
  if (cfg.noise_scale > 0.0) {
    acc += cfg.noise_scale * seeded_gaussian(cfg.dim, cfg.seed, kStreamNoise,
                                             static_cast<uint64_t>(persona.persona_id));
  }
  double n = acc.norm();
  if (!(n >= 1e-12)) throw NumericalError("synthetic_embed: degenerate embedding");
  return acc / n;
}

RawEmbeddingSet embed_corpus(const PersonaCorpus& corpus, const SyntheticEmbedderConfig& cfg) {
  RawEmbeddingSet set;
  set.dim = cfg.dim;
  for (const auto& p : corpus.personas) {
    set.by_persona.emplace(p.persona_id, synthetic_embed(p, cfg, corpus.occupation_count));
  }
  return set;
}

RawEmbeddingSet constant_embeddings(const PersonaCorpus& corpus, int dim) {
  RawEmbeddingSet set;
  set.dim = dim;
  Vec v = Vec::Constant(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (const auto& p : corpus.personas) set.by_persona.emplace(p.persona_id, v);
  return set;
}

// --- Embedding files --------------------------------------------------------

namespace {
constexpr char kEmbMagic[8] = {'P', 'R', 'L', 'E', 'M', 'B', '0', '1'};

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::ifstream& in, const char* what) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError(std::string("embeddings: truncated ") + what);
  return v;
}
}  // namespace

void save_embeddings_binary(const RawEmbeddingSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_embeddings_binary: cannot open " + path);
  out.write(kEmbMagic, sizeof(kEmbMagic));
  write_u32(out, static_cast<uint32_t>(set.by_persona.size()));
  write_u32(out, static_cast<uint32_t>(set.dim));
  std::vector<float> row(static_cast<size_t>(set.dim));
  for (const auto& [id, vec] : set.by_persona) {
    write_u32(out, static_cast<uint32_t>(id));
    for (int i = 0; i < set.dim; ++i) row[static_cast<size_t>(i)] = static_cast<float>(vec[i]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

void save_embeddings_jsonl(const RawEmbeddingSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("save_embeddings_jsonl: cannot open " + path);
  for (const auto& [id, vec] : set.by_persona) {
    json j;
    j["persona_id"] = id;
    // Store float32 precision to match the binary format bit-for-bit.
    std::vector<double> vals(static_cast<size_t>(set.dim));
    for (int i = 0; i < set.dim; ++i) vals[static_cast<size_t>(i)] = static_cast<float>(vec[i]);
    j["values"] = vals;
    out << j.dump() << "\n";
  }
}

namespace {

RawEmbeddingSet finalize_loaded(RawEmbeddingSet set) {
  for (auto& [id, vec] : set.by_persona) {
    double n = vec.norm();
    if (!(n >= 1e-12)) {
      throw FormatError("embeddings: zero vector for persona_id " + std::to_string(id));
    }
    vec /= n;
  }
  return set;
}

RawEmbeddingSet load_embeddings_binary(std::ifstream& in) {
  RawEmbeddingSet set;
  uint32_t count = read_u32(in, "count");
  set.dim = static_cast<int>(read_u32(in, "dim"));
  if (set.dim <= 0) throw FormatError("embeddings: non-positive dim");
  std::vector<float> row(static_cast<size_t>(set.dim));
  for (uint32_t r = 0; r < count; ++r) {
    uint32_t id = read_u32(in, "persona_id");
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw FormatError("embeddings: truncated row " + std::to_string(r));
    Vec v(set.dim);
    for (int i = 0; i < set.dim; ++i) v[i] = row[static_cast<size_t>(i)];
    if (!set.by_persona.emplace(static_cast<int>(id), std::move(v)).second) {
      throw FormatError("embeddings: duplicate persona_id " + std::to_string(id));
    }
  }
  return finalize_loaded(std::move(set));
}

RawEmbeddingSet load_embeddings_jsonl(const std::string& path) {
  std::ifstream in(path);
  RawEmbeddingSet set;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("embeddings parse error at line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    int id = j.at("persona_id").get<int>();
    auto vals = j.at("values").get<std::vector<double>>();
    if (set.dim == 0) set.dim = static_cast<int>(vals.size());
    if (static_cast<int>(vals.size()) != set.dim) {
      throw FormatError("embeddings: inconsistent dim at line " + std::to_string(line_no));
    }
    Vec v(set.dim);
    for (int i = 0; i < set.dim; ++i) v[i] = vals[static_cast<size_t>(i)];
    if (!set.by_persona.emplace(id, std::move(v)).second) {
      throw FormatError("embeddings: duplicate persona_id " + std::to_string(id));
    }
  }
  if (set.by_persona.empty()) throw FormatError("embeddings: empty file " + path);
  return finalize_loaded(std::move(set));
}

}  // namespace

RawEmbeddingSet load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_embeddings: cannot open " + path);
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (in && std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) == 0) {
    return load_embeddings_binary(in);
  }
  return load_embeddings_jsonl(path);
}

// --- Low-rank projection -----------------------------------------------------

ProjectionParams init_projection(int in_dim, uint64_t seed) {
  if (in_dim < kEmbedDim) throw ConfigError("init_projection: in_dim must be >= 64");
  ProjectionParams p;
  p.alpha = 1.0 / std::sqrt(static_cast<double>(kEmbedDim));
  Rng rng(mix_seed(seed, 0x50524F4AULL));
  p.A = Mat(kProjectionRank, in_dim);
  double a_std = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < p.A.rows(); ++i) {
    for (int j = 0; j < p.A.cols(); ++j) p.A(i, j) = a_std * rng.normal();
  }
  p.B = Mat(kEmbedDim, kProjectionRank);
  double b_std = 1.0 / std::sqrt(static_cast<double>(kProjectionRank));
  for (int i = 0; i < p.B.rows(); ++i) {
    for (int j = 0; j < p.B.cols(); ++j) p.B(i, j) = b_std * rng.normal();
  }
  if (!(p.B.norm() > 0.0)) throw NumericalError("init_projection: degenerate B");
  return p;
}

Vec project(const ProjectionParams& params, const Vec& raw, ProjectionCache* cache) {
  if (raw.size() != params.A.cols()) {
    throw ConfigError("project: raw embedding dim does not match projection");
  }
  Vec u = params.A * raw;
  Vec y = params.alpha * (params.B * u);
  double n = y.norm();
  if (!(n >= 1e-12)) {
    throw NumericalError("project: projected embedding collapsed (norm < 1e-12)");
  }
  Vec e = y / n;
  if (cache != nullptr) {
    cache->valid = true;
    cache->raw = raw;
    cache->u = u;
    cache->y = y;
    cache->e = e;
    cache->norm = n;
  }
  return e;
}

void projection_backward(const ProjectionParams& params, const ProjectionCache& cache,
                         const Vec& de, ProjectionParams& grad) {
  if (!cache.valid) throw StateError("projection_backward: no recorded forward pass");
  // Through normalization: dy = (de - e * (e . de)) / ||y||.
  Vec dy = (de - cache.e * cache.e.dot(de)) / cache.norm;
  grad.B.noalias() += params.alpha * dy * cache.u.transpose();
  Vec du = params.alpha * (params.B.transpose() * dy);
  grad.A.noalias() += du * cache.raw.transpose();
}

}  // namespace personarl
