#pragma once

// Persona embedding providers and the trainable low-rank projection that
// maps raw embeddings into the 64-d conditioning space.
//
// The synthetic provider mixes a trait term and an occupation term:
//   raw = normalize((1 - bias) * W_bf * big_five + bias * W_occ * onehot(occ)
//                   + noise_scale * g(seed, persona_id))
// with fixed seeded mixing matrices. The occupation term carries no
// behavioral semantics, so a useful projection has to learn to favor the
// trait subspace.
//
// Projection: e = normalize(alpha * B * A * raw), A: 16 x in_dim,
// B: 64 x 16, alpha = 1/sqrt(64) = 0.125 exactly.

#include "personarl/common.hpp"
#include "personarl/persona.hpp"

#include <map>
#include <string>

namespace personarl {

constexpr int kEmbedDim = 64;       // conditioning vector size
constexpr int kProjectionRank = 16;
constexpr int kDefaultRawDim = 1024;

struct SyntheticEmbedderConfig {
  int dim = kDefaultRawDim;
  double occupation_bias = 0.7;  // in [0, 1]
  double noise_scale = 0.05;     // >= 0
  uint64_t seed = 0;

  void validate() const;
};

struct RawEmbeddingSet {
  int dim = 0;
  std::map<int, Vec> by_persona;  // persona_id -> unit vector

  const Vec& at(int persona_id) const;
  // Throws ProtocolError if any corpus persona lacks an embedding.
  void require_cover(const PersonaCorpus& corpus) const;
};

// Unit-norm raw embedding; deterministic in all arguments.
Vec synthetic_embed(const PersonaRecord& persona, const SyntheticEmbedderConfig& cfg,
                    int occupation_count);
RawEmbeddingSet embed_corpus(const PersonaCorpus& corpus, const SyntheticEmbedderConfig& cfg);
// Identical unit vector for every persona (no-persona baseline conditioning).
RawEmbeddingSet constant_embeddings(const PersonaCorpus& corpus, int dim);

// --- Embedding files --------------------------------------------------------
// Binary layout (little endian):
//   magic "PRLEMB01" | u32 count | u32 dim | count * (u32 persona_id, dim * f32)
// The JSONL variant stores {"persona_id": id, "values": [...]} per line.
// Loaders re-normalize rows and reject zero vectors and dim mismatches.
void save_embeddings_binary(const RawEmbeddingSet& set, const std::string& path);
void save_embeddings_jsonl(const RawEmbeddingSet& set, const std::string& path);
RawEmbeddingSet load_embeddings(const std::string& path);  // auto-detects format

// --- Low-rank projection -----------------------------------------------------

struct ProjectionParams {
  Mat A;  // rank x in_dim
  Mat B;  // kEmbedDim x rank
  double alpha = 0.125;

  int in_dim() const { return static_cast<int>(A.cols()); }

  template <class Self, class F>
  static void visit_tensors(Self& self, F&& f) {
    f("projection.A", self.A);
    f("projection.B", self.B);
  }
  template <class F> void for_each_tensor(F&& f) { visit_tensors(*this, f); }
  template <class F> void for_each_tensor(F&& f) const { visit_tensors(*this, f); }
};

// A ~ N(0, 1/in_dim), B ~ N(0, 1/rank); asserts a non-degenerate B.
ProjectionParams init_projection(int in_dim, uint64_t seed);

struct ProjectionCache {
  bool valid = false;
  Vec raw, u, y, e;
  double norm = 0.0;
};

// e = normalize(alpha * B * A * raw); throws NumericalError if the
// pre-normalization output collapses below 1e-12.
Vec project(const ProjectionParams& params, const Vec& raw, ProjectionCache* cache = nullptr);

// Accumulates dL/dA and dL/dB given dL/de. Requires a recorded forward cache.
void projection_backward(const ProjectionParams& params, const ProjectionCache& cache,
                         const Vec& de, ProjectionParams& grad);

}  // namespace personarl
