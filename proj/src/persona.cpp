#include "personarl/persona.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace personarl {

using nlohmann::json;

const char* trait_name(int trait) {
  static const char* kNames[kTraitCount] = {"openness", "conscientiousness", "extraversion",
                                            "agreeableness", "neuroticism"};
  if (trait < 0 || trait >= kTraitCount) throw ConfigError("trait_name: bad trait index");
  return kNames[trait];
}

namespace {

struct ArchetypeRow {
  const char* name;
  std::array<double, kTraitCount> traits;
};

// Five high-pole, five low-pole, ten mixed profiles. Values in [0, 1] with
// 0.5 as the neutral midpoint.
constexpr int kCanonicalArchetypes = 20;
const ArchetypeRow kArchetypes[kCanonicalArchetypes] = {
    {"curious_artist", {0.95, 0.40, 0.55, 0.55, 0.45}},
    {"disciplined_planner", {0.45, 0.95, 0.40, 0.50, 0.30}},
    {"gregarious_host", {0.55, 0.45, 0.95, 0.65, 0.35}},
    {"warm_caregiver", {0.50, 0.55, 0.55, 0.95, 0.30}},
    {"anxious_worrier", {0.45, 0.50, 0.35, 0.50, 0.95}},
    {"conventional_pragmatist", {0.05, 0.55, 0.50, 0.50, 0.45}},
    {"spontaneous_drifter", {0.60, 0.05, 0.55, 0.50, 0.50}},
    {"reclusive_thinker", {0.60, 0.55, 0.05, 0.45, 0.40}},
    {"blunt_competitor", {0.50, 0.55, 0.55, 0.05, 0.45}},
    {"unflappable_stoic", {0.50, 0.55, 0.45, 0.55, 0.05}},
    {"strategist", {0.85, 0.85, 0.30, 0.35, 0.25}},
    {"performer", {0.80, 0.30, 0.85, 0.50, 0.55}},
    {"organizer_leader", {0.35, 0.85, 0.80, 0.60, 0.25}},
    {"gentle_scholar", {0.75, 0.60, 0.25, 0.85, 0.35}},
    {"restless_hustler", {0.55, 0.75, 0.70, 0.30, 0.80}},
    {"free_spirit", {0.90, 0.15, 0.70, 0.60, 0.40}},
    {"meticulous_hermit", {0.30, 0.90, 0.10, 0.40, 0.60}},
    {"social_mediator", {0.45, 0.50, 0.75, 0.90, 0.20}},
    {"driven_perfectionist", {0.60, 0.90, 0.45, 0.25, 0.70}},
    {"easygoing_neighbor", {0.40, 0.30, 0.60, 0.75, 0.15}},
};

constexpr int kCanonicalOccupations = 25;
// The first four are the default held-out occupations of the
// unseen-occupation split.
const char* kOccupations[kCanonicalOccupations] = {
    "chef",     "professor", "data_scientist", "hr_manager", "nurse",
    "carpenter", "salesperson", "executive",   "trainer",    "blogger",
    "architect", "librarian",  "barista",      "engineer",   "artist",
    "accountant", "journalist", "gardener",    "musician",   "athlete",
    "therapist", "pilot",      "bartender",    "researcher", "designer",
};

std::string trait_phrase(const TraitVec& bf) {
  // Two most extreme traits drive the description.
  std::array<int, kTraitCount> order{0, 1, 2, 3, 4};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double da = std::abs(bf[a] - 0.5), db = std::abs(bf[b] - 0.5);
    if (da != db) return da > db;
    return a < b;
  });
  auto describe = [&](int t) {
    bool high = bf[t] >= 0.5;
    switch (t) {
      case kOpenness: return high ? "curious and open to new experiences" : "practical and conventional";
      case kConscientiousness: return high ? "organized and dependable" : "spontaneous and loosely structured";
      case kExtraversion: return high ? "outgoing and energized by company" : "reserved and quiet";
      case kAgreeableness: return high ? "warm and accommodating" : "direct and competitive";
      default: return high ? "sensitive to stress" : "calm under pressure";
    }
  };
  std::ostringstream os;
  os << "They are " << describe(order[0]) << ", and " << describe(order[1]) << ".";
  return os.str();
}

}  // namespace

TraitVec archetype_big_five(int archetype_id, uint64_t seed) {
  if (archetype_id < 0) throw ConfigError("archetype_big_five: negative id");
  TraitVec v;
  if (archetype_id < kCanonicalArchetypes) {
    for (int i = 0; i < kTraitCount; ++i) {
      v[i] = kArchetypes[archetype_id].traits[static_cast<size_t>(i)];
    }
    return v;
  }
  // Procedural extension beyond the canonical table.
  Rng rng(mix_seed(seed, 0x41524348ULL, static_cast<uint64_t>(archetype_id)));
  for (int i = 0; i < kTraitCount; ++i) v[i] = rng.uniform(0.1, 0.9);
  return v;
}

const char* archetype_name(int archetype_id) {
  if (archetype_id < 0 || archetype_id >= kCanonicalArchetypes) {
    throw ConfigError("archetype_name: id outside canonical table");
  }
  return kArchetypes[archetype_id].name;
}

std::string occupation_label(int occupation_id) {
  if (occupation_id < 0) throw ConfigError("occupation_label: negative id");
  if (occupation_id < kCanonicalOccupations) return kOccupations[occupation_id];
  return "occupation_" + std::to_string(occupation_id);
}

std::vector<int> preferred_actions_for(const TraitVec& big_five, const ActionOntology& ont,
                                       int k) {
  if (!(big_five.norm() > 1e-12)) throw NumericalError("preferred_actions_for: zero trait vector");
  if (k <= 0 || k > ont.action_count()) throw ConfigError("preferred_actions_for: bad k");
  std::vector<int> ids(static_cast<size_t>(ont.action_count()));
  std::vector<double> cos(ids.size());
  TraitVec unit = big_five / big_five.norm();
  for (int a = 0; a < ont.action_count(); ++a) {
    ids[static_cast<size_t>(a)] = a;
    cos[static_cast<size_t>(a)] = ont.action(a).style.dot(unit);
  }
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return cos[static_cast<size_t>(a)] > cos[static_cast<size_t>(b)];
  });
  std::vector<int> top(ids.begin(), ids.begin() + k);
  std::sort(top.begin(), top.end());
  return top;
}

const PersonaRecord& PersonaCorpus::by_id(int persona_id) const {
  if (persona_id < 0 || persona_id >= size() ||
      personas[static_cast<size_t>(persona_id)].persona_id != persona_id) {
    throw ConfigError("PersonaCorpus: unknown persona_id " + std::to_string(persona_id));
  }
  return personas[static_cast<size_t>(persona_id)];
}

PersonaCorpus generate_corpus(int archetype_count, int occupation_count, uint64_t seed,
                              const ActionOntology& ont) {
  if (archetype_count < 2 || occupation_count < 2) {
    throw ConfigError("generate_corpus: need at least 2 archetypes and 2 occupations");
  }
  PersonaCorpus corpus;
  corpus.archetype_count = archetype_count;
  corpus.occupation_count = occupation_count;
  corpus.ontology_version = ont.version;
  corpus.personas.reserve(static_cast<size_t>(archetype_count) * occupation_count);
  for (int arch = 0; arch < archetype_count; ++arch) {
    TraitVec bf = archetype_big_five(arch, seed);
    std::vector<int> preferred = preferred_actions_for(bf, ont);
    for (int occ = 0; occ < occupation_count; ++occ) {
      PersonaRecord p;
      p.persona_id = arch * occupation_count + occ;
      p.archetype_id = arch;
      p.occupation_id = occ;
      p.big_five = bf;
      p.preferred_actions = preferred;
      std::ostringstream os;
      std::string label = occupation_label(occ);
      os << "A " << (arch < kCanonicalArchetypes ? archetype_name(arch)
                                                 : "archetype_" + std::to_string(arch))
         << " working as a " << label << ". " << trait_phrase(bf);
      p.text_surrogate = os.str();
      corpus.personas.push_back(std::move(p));
    }
  }
  return corpus;
}

// --- Splits -----------------------------------------------------------------

const char* split_kind_name(SplitKind k) {
  switch (k) {
    case SplitKind::unseen_occupation: return "unseen_occupation";
    case SplitKind::unseen_archetype: return "unseen_archetype";
    case SplitKind::cross: return "cross";
  }
  throw ConfigError("split_kind_name: bad kind");
}

SplitKind split_kind_from_name(const std::string& name) {
  if (name == "unseen_occupation") return SplitKind::unseen_occupation;
  if (name == "unseen_archetype") return SplitKind::unseen_archetype;
  if (name == "cross") return SplitKind::cross;
  throw ConfigError("split kind must be unseen_occupation|unseen_archetype|cross, got '" + name +
                    "'");
}

void CorpusSplit::validate(const PersonaCorpus& corpus) const {
  if (heldout_ids.empty() || heldout_ids.size() >= corpus.personas.size()) {
    throw ConfigError("split: held-out set must be non-empty and a strict subset");
  }
  std::vector<char> seen(static_cast<size_t>(corpus.size()), 0);
  for (int id : train_ids) seen.at(static_cast<size_t>(id)) += 1;
  for (int id : heldout_ids) seen.at(static_cast<size_t>(id)) += 1;
  for (char c : seen) {
    if (c != 1) throw ConfigError("split: train/heldout must partition the corpus");
  }
}

namespace {

CorpusSplit build_split(const PersonaCorpus& corpus, SplitKind kind,
                        const std::vector<int>& occs, const std::vector<int>& archs) {
  std::set<int> occ_set(occs.begin(), occs.end());
  std::set<int> arch_set(archs.begin(), archs.end());
  for (int o : occ_set) {
    if (o < 0 || o >= corpus.occupation_count) throw ConfigError("split: bad occupation id");
  }
  for (int a : arch_set) {
    if (a < 0 || a >= corpus.archetype_count) throw ConfigError("split: bad archetype id");
  }
  CorpusSplit s;
  s.kind = kind;
  s.heldout_occupations.assign(occ_set.begin(), occ_set.end());
  s.heldout_archetypes.assign(arch_set.begin(), arch_set.end());
  for (const auto& p : corpus.personas) {
    bool held = false;
    switch (kind) {
      case SplitKind::unseen_occupation: held = occ_set.count(p.occupation_id) > 0; break;
      case SplitKind::unseen_archetype: held = arch_set.count(p.archetype_id) > 0; break;
      case SplitKind::cross:
        held = occ_set.count(p.occupation_id) > 0 && arch_set.count(p.archetype_id) > 0;
        break;
    }
    (held ? s.heldout_ids : s.train_ids).push_back(p.persona_id);
  }
  s.validate(corpus);
  return s;
}

}  // namespace

CorpusSplit split_unseen_occupation(const PersonaCorpus& corpus,
                                    const std::vector<int>& heldout_occupations) {
  return build_split(corpus, SplitKind::unseen_occupation, heldout_occupations, {});
}

CorpusSplit split_unseen_archetype(const PersonaCorpus& corpus,
                                   const std::vector<int>& heldout_archetypes) {
  return build_split(corpus, SplitKind::unseen_archetype, {}, heldout_archetypes);
}

CorpusSplit split_cross(const PersonaCorpus& corpus, const std::vector<int>& heldout_occupations,
                        const std::vector<int>& heldout_archetypes) {
  return build_split(corpus, SplitKind::cross, heldout_occupations, heldout_archetypes);
}

CorpusSplit make_split(const PersonaCorpus& corpus, SplitKind kind, int heldout_occupation_count,
                       int heldout_archetype_count, uint64_t seed) {
  Rng rng(mix_seed(seed, 0x53504C54ULL));
  std::vector<int> occs, archs;
  if (kind != SplitKind::unseen_archetype) {
    if (heldout_occupation_count <= 0 || heldout_occupation_count >= corpus.occupation_count) {
      throw ConfigError("split: held-out occupation count out of range");
    }
    occs = rng.sample_without_replacement(corpus.occupation_count, heldout_occupation_count);
  }
  if (kind != SplitKind::unseen_occupation) {
    if (heldout_archetype_count <= 0 || heldout_archetype_count >= corpus.archetype_count) {
      throw ConfigError("split: held-out archetype count out of range");
    }
    archs = rng.sample_without_replacement(corpus.archetype_count, heldout_archetype_count);
  }
  return build_split(corpus, kind, occs, archs);
}

// --- Serialization ----------------------------------------------------------

namespace {

json persona_to_json(const PersonaRecord& p) {
  json j;
  j["persona_id"] = p.persona_id;
  j["archetype_id"] = p.archetype_id;
  j["occupation_id"] = p.occupation_id;
  std::vector<double> bf(p.big_five.data(), p.big_five.data() + kTraitCount);
  j["big_five"] = bf;
  j["preferred_actions"] = p.preferred_actions;
  j["text_surrogate"] = p.text_surrogate;
  return j;
}

PersonaRecord persona_from_json(const json& j) {
  PersonaRecord p;
  p.persona_id = j.at("persona_id").get<int>();
  p.archetype_id = j.at("archetype_id").get<int>();
  p.occupation_id = j.at("occupation_id").get<int>();
  auto bf = j.at("big_five").get<std::vector<double>>();
  if (bf.size() != kTraitCount) throw FormatError("corpus: big_five must have 5 entries");
  for (int i = 0; i < kTraitCount; ++i) {
    if (bf[static_cast<size_t>(i)] < 0.0 || bf[static_cast<size_t>(i)] > 1.0) {
      throw FormatError("corpus: big_five entries must lie in [0, 1]");
    }
    p.big_five[i] = bf[static_cast<size_t>(i)];
  }
  p.preferred_actions = j.at("preferred_actions").get<std::vector<int>>();
  if (p.preferred_actions.empty()) throw FormatError("corpus: empty preferred_actions");
  p.text_surrogate = j.at("text_surrogate").get<std::string>();
  return p;
}

}  // namespace

void save_corpus_jsonl(const PersonaCorpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("save_corpus_jsonl: cannot open " + path);
  json header;
  header["archetype_count"] = corpus.archetype_count;
  header["occupation_count"] = corpus.occupation_count;
  header["ontology_version"] = corpus.ontology_version;
  out << header.dump() << "\n";
  for (const auto& p : corpus.personas) out << persona_to_json(p).dump() << "\n";
}

PersonaCorpus load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("load_corpus_jsonl: cannot open " + path);
  PersonaCorpus corpus;
  std::string line;
  int line_no = 0;
  std::set<int> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("corpus parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1 && j.contains("archetype_count")) {
        corpus.archetype_count = j.at("archetype_count").get<int>();
        corpus.occupation_count = j.at("occupation_count").get<int>();
        corpus.ontology_version = j.at("ontology_version").get<int>();
        continue;
      }
      PersonaRecord p = persona_from_json(j);
      if (!ids.insert(p.persona_id).second) {
        throw FormatError("corpus integrity error: duplicate persona_id " +
                          std::to_string(p.persona_id) + " at line " + std::to_string(line_no));
      }
      corpus.personas.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw FormatError("corpus field error at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::sort(corpus.personas.begin(), corpus.personas.end(),
            [](const PersonaRecord& a, const PersonaRecord& b) { return a.persona_id < b.persona_id; });
  for (size_t i = 0; i < corpus.personas.size(); ++i) {
    if (corpus.personas[i].persona_id != static_cast<int>(i)) {
      throw FormatError("corpus integrity error: persona ids must be contiguous from 0");
    }
  }
  if (corpus.archetype_count == 0) throw FormatError("corpus: missing header line");
  return corpus;
}

void save_split_json(const CorpusSplit& split, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("save_split_json: cannot open " + path);
  json j;
  j["kind"] = split_kind_name(split.kind);
  j["train_ids"] = split.train_ids;
  j["heldout_ids"] = split.heldout_ids;
  j["heldout_occupations"] = split.heldout_occupations;
  j["heldout_archetypes"] = split.heldout_archetypes;
  out << j.dump(2) << "\n";
}

CorpusSplit load_split_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("load_split_json: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("split parse error: ") + e.what());
  }
  CorpusSplit s;
  s.kind = split_kind_from_name(j.at("kind").get<std::string>());
  s.train_ids = j.at("train_ids").get<std::vector<int>>();
  s.heldout_ids = j.at("heldout_ids").get<std::vector<int>>();
  s.heldout_occupations = j.at("heldout_occupations").get<std::vector<int>>();
  s.heldout_archetypes = j.at("heldout_archetypes").get<std::vector<int>>();
  return s;
}

std::string persona_constants_dump() {
  std::ostringstream os;
  os.precision(17);
  for (int a = 0; a < kCanonicalArchetypes; ++a) {
    os << a << ' ' << kArchetypes[a].name;
    for (double t : kArchetypes[a].traits) os << ' ' << t;
    os << "\n";
  }
  for (int o = 0; o < kCanonicalOccupations; ++o) os << o << ' ' << kOccupations[o] << "\n";
  return os.str();
}

}  // namespace personarl
