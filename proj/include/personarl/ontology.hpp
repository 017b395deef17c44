#pragma once

// Action ontologies for the grid-life environment.
//
// Version 1: 8 activity actions (one per need) + 4 movement actions.
// Version 3: 16 activity actions (two styled variants per need) + 4 movement
// actions. The first variant of each need has the higher satisfaction gain;
// the second trades gain for a sharper trait signature.
//
// Every action carries a unit-norm five-dimensional style profile over the
// Big-Five trait axes (openness, conscientiousness, extraversion,
// agreeableness, neuroticism). Profiles are mean-centered before
// normalization so that preference rankings respond to trait deviations
// rather than overall trait positivity; the constants below were tuned so
// that the canonical persona archetypes induce distinct top-3 preference
// sets. Movement profiles are deliberately weak trait signals.

#include "personarl/common.hpp"

#include <array>
#include <string>
#include <vector>

namespace personarl {

enum Need : int {
  kHunger = 0,
  kSleep,
  kSocial,
  kLeisure,
  kHygiene,
  kFitness,
  kWork,
  kLearning,
};
constexpr int kNeedCount = 8;
const char* need_name(int need);

constexpr int kTraitCount = 5;
using TraitVec = Eigen::Matrix<double, kTraitCount, 1>;

struct ActionDescriptor {
  int id = 0;
  std::string name;
  bool is_movement = false;
  int dx = 0, dy = 0;      // movement delta (east+, north+); zero for activities
  int target_need = -1;    // -1 for movement
  double gain = 0.0;       // need satisfaction gain; zero for movement
  bool social_targeting = false;  // counts toward the proximity social bonus
  TraitVec style;          // unit-norm, mean-centered trait profile
};

struct ActionOntology {
  int version = 1;  // 1 or 3
  std::vector<ActionDescriptor> actions;

  int action_count() const { return static_cast<int>(actions.size()); }
  const ActionDescriptor& action(int id) const { return actions.at(static_cast<size_t>(id)); }
  int action_id(const std::string& name) const;

  // Throws ConfigError if structural invariants are violated (exactly four
  // movement actions, all needs covered, unit-norm styles).
  void validate() const;

  static ActionOntology v1();
  static ActionOntology v3();
  static ActionOntology by_version(int version);
};

// Canonical serialization of the ontology constants, used for content hashes.
std::string ontology_constants_dump(const ActionOntology& ont);

}  // namespace personarl
