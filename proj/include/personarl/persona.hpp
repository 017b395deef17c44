#pragma once

// Synthetic persona corpus: archetype x occupation grid with Big-Five trait
// vectors, derived preferred actions, and deterministic text surrogates.

#include "personarl/common.hpp"
#include "personarl/ontology.hpp"

#include <string>
#include <vector>

namespace personarl {

enum Trait : int {
  kOpenness = 0,
  kConscientiousness,
  kExtraversion,
  kAgreeableness,
  kNeuroticism,
};
const char* trait_name(int trait);

struct PersonaRecord {
  int persona_id = 0;     // archetype_id * occupation_count + occupation_id
  int archetype_id = 0;
  int occupation_id = 0;
  TraitVec big_five;      // componentwise in [0, 1], non-zero
  std::vector<int> preferred_actions;  // sorted action ids, top-3 by style cosine
  std::string text_surrogate;
};

struct PersonaCorpus {
  int archetype_count = 0;
  int occupation_count = 0;
  int ontology_version = 1;
  std::vector<PersonaRecord> personas;  // indexed by persona_id

  int size() const { return static_cast<int>(personas.size()); }
  const PersonaRecord& by_id(int persona_id) const;
};

// Canonical archetype trait vectors. Ids below 20 come from a fixed table;
// beyond that they are generated deterministically from (seed, id).
TraitVec archetype_big_five(int archetype_id, uint64_t seed);
const char* archetype_name(int archetype_id);  // ids < 20 only
std::string occupation_label(int occupation_id);

// Top-k action ids ranked by cos(big_five, action style); ties break toward
// the lower action id. Returned sorted ascending.
std::vector<int> preferred_actions_for(const TraitVec& big_five, const ActionOntology& ont,
                                       int k = 3);

PersonaCorpus generate_corpus(int archetype_count, int occupation_count, uint64_t seed,
                              const ActionOntology& ont);

// --- Splits -----------------------------------------------------------------

enum class SplitKind { unseen_occupation, unseen_archetype, cross };
const char* split_kind_name(SplitKind k);
SplitKind split_kind_from_name(const std::string& name);

struct CorpusSplit {
  SplitKind kind = SplitKind::unseen_occupation;
  std::vector<int> train_ids;    // sorted ascending
  std::vector<int> heldout_ids;  // sorted ascending
  std::vector<int> heldout_occupations;
  std::vector<int> heldout_archetypes;

  void validate(const PersonaCorpus& corpus) const;
};

CorpusSplit split_unseen_occupation(const PersonaCorpus& corpus,
                                    const std::vector<int>& heldout_occupations);
CorpusSplit split_unseen_archetype(const PersonaCorpus& corpus,
                                   const std::vector<int>& heldout_archetypes);
// Holds out only personas whose occupation AND archetype are both held out.
CorpusSplit split_cross(const PersonaCorpus& corpus, const std::vector<int>& heldout_occupations,
                        const std::vector<int>& heldout_archetypes);
// Count-based variants sample the held-out sets with a seeded RNG.
CorpusSplit make_split(const PersonaCorpus& corpus, SplitKind kind, int heldout_occupation_count,
                       int heldout_archetype_count, uint64_t seed);

// --- Serialization ----------------------------------------------------------

// Corpus files are JSON lines, one persona per line. Splits are a single JSON
// object. Loaders throw FormatError with a line number on malformed input.
void save_corpus_jsonl(const PersonaCorpus& corpus, const std::string& path);
PersonaCorpus load_corpus_jsonl(const std::string& path);
void save_split_json(const CorpusSplit& split, const std::string& path);
CorpusSplit load_split_json(const std::string& path);

// Canonical dump of the persona constant tables (for content hashing).
std::string persona_constants_dump();

}  // namespace personarl
