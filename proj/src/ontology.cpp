#include "personarl/ontology.hpp"

#include <cmath>
#include <sstream>

namespace personarl {

const char* need_name(int need) {
  static const char* kNames[kNeedCount] = {"hunger", "sleep",   "social", "leisure",
                                           "hygiene", "fitness", "work",   "learning"};
  if (need < 0 || need >= kNeedCount) throw ConfigError("need_name: bad need index");
  return kNames[need];
}

namespace {

struct RawAction {
  const char* name;
  int target_need;  // -1 for movement
  double gain;
  std::array<double, kTraitCount> style;  // centered + normalized at build time
};

ActionOntology build(int version, const std::vector<RawAction>& rows) {
  ActionOntology ont;
  ont.version = version;
  int id = 0;
  for (const auto& r : rows) {
    ActionDescriptor a;
    a.id = id++;
    a.name = r.name;
    a.target_need = r.target_need;
    a.gain = r.gain;
    a.is_movement = r.target_need < 0;
    if (a.is_movement) {
      if (a.name == "move_north") a.dy = 1;
      if (a.name == "move_south") a.dy = -1;
      if (a.name == "move_east") a.dx = 1;
      if (a.name == "move_west") a.dx = -1;
    }
    a.social_targeting = r.target_need == kSocial;
    TraitVec s;
    for (int i = 0; i < kTraitCount; ++i) s[i] = r.style[static_cast<size_t>(i)];
    s.array() -= s.mean();
    double n = s.norm();
    if (!(n > 1e-12)) throw ConfigError("ontology: degenerate style profile");
    a.style = s / n;
    ont.actions.push_back(std::move(a));
  }
  ont.validate();
  return ont;
}

const std::vector<RawAction>& v1_rows() {
  static const std::vector<RawAction> rows = {
      {"eat", kHunger, 0.15, {+0.05, -0.50, -0.15, +0.80, -0.20}},
      {"sleep", kSleep, 0.15, {+0.20, -0.45, -0.45, +0.00, +0.75}},
      {"socialize", kSocial, 0.15, {-0.55, -0.15, +0.80, +0.05, -0.15}},
      {"relax", kLeisure, 0.15, {+0.55, -0.60, -0.35, +0.45, -0.10}},
      {"wash", kHygiene, 0.15, {-0.50, +0.20, -0.45, +0.00, +0.70}},
      {"exercise", kFitness, 0.15, {+0.40, +0.30, +0.35, -0.75, -0.30}},
      {"work", kWork, 0.15, {-0.60, +0.75, -0.20, +0.20, -0.15}},
      {"study", kLearning, 0.15, {+0.55, +0.00, -0.80, -0.05, +0.30}},
      {"move_north", -1, 0.0, {-0.47, -0.53, +0.07, +0.30, +0.63}},
      {"move_south", -1, 0.0, {-0.22, -0.39, -0.47, +0.50, +0.58}},
      {"move_east", -1, 0.0, {-0.39, -0.27, -0.43, +0.61, +0.47}},
      {"move_west", -1, 0.0, {-0.12, -0.45, -0.48, +0.50, +0.55}},
  };
  return rows;
}

const std::vector<RawAction>& v3_rows() {
  static const std::vector<RawAction> rows = {
      {"eat_quick", kHunger, 0.15, {-0.05, +0.75, +0.20, -0.55, -0.35}},
      {"eat_slow", kHunger, 0.10, {+0.55, -0.70, -0.05, +0.40, -0.15}},
      {"rest_alone", kSleep, 0.15, {-0.10, -0.35, -0.50, +0.20, +0.75}},
      {"rest_with_others", kSleep, 0.10, {-0.35, -0.30, +0.05, +0.85, -0.25}},
      {"socialize_initiate", kSocial, 0.15, {+0.35, -0.15, +0.55, -0.10, -0.70}},
      {"socialize_join", kSocial, 0.10, {-0.45, -0.35, -0.20, +0.75, +0.25}},
      {"leisure_outdoor", kLeisure, 0.15, {+0.35, -0.45, +0.50, +0.20, -0.60}},
      {"leisure_indoor", kLeisure, 0.10, {+0.65, -0.65, -0.20, -0.10, +0.30}},
      {"groom_quick", kHygiene, 0.15, {-0.45, +0.80, -0.10, +0.15, -0.40}},
      {"groom_thorough", kHygiene, 0.10, {-0.20, +0.20, -0.35, -0.45, +0.80}},
      {"exercise_intense", kFitness, 0.15, {-0.25, +0.00, +0.85, -0.25, -0.35}},
      {"exercise_light", kFitness, 0.10, {-0.30, +0.35, -0.60, +0.65, -0.10}},
      {"focused_work", kWork, 0.15, {-0.45, +0.50, -0.50, -0.10, +0.55}},
      {"planning_work", kWork, 0.10, {+0.10, +0.70, +0.05, -0.15, -0.70}},
      {"study_deep", kLearning, 0.15, {+0.55, +0.30, -0.55, -0.50, +0.20}},
      {"study_casual", kLearning, 0.10, {+0.35, -0.65, +0.60, +0.05, -0.35}},
      {"move_north", -1, 0.0, {-0.30, -0.65, +0.55, +0.00, +0.45}},
      {"move_south", -1, 0.0, {-0.20, -0.70, -0.05, +0.40, +0.55}},
      {"move_east", -1, 0.0, {-0.35, -0.60, +0.40, -0.05, +0.60}},
      {"move_west", -1, 0.0, {-0.40, -0.65, +0.25, +0.45, +0.35}},
  };
  return rows;
}

}  // namespace

int ActionOntology::action_id(const std::string& name) const {
  for (const auto& a : actions) {
    if (a.name == name) return a.id;
  }
  throw ConfigError("ActionOntology: unknown action name '" + name + "'");
}

void ActionOntology::validate() const {
  if (version != 1 && version != 3) throw ConfigError("ontology: version must be 1 or 3");
  int expected = version == 1 ? 12 : 20;
  if (action_count() != expected) throw ConfigError("ontology: unexpected action count");
  int movement = 0;
  std::array<int, kNeedCount> covered{};
  for (const auto& a : actions) {
    if (a.is_movement) {
      ++movement;
      if (a.target_need != -1 || a.gain != 0.0 || (std::abs(a.dx) + std::abs(a.dy)) != 1) {
        throw ConfigError("ontology: malformed movement action " + a.name);
      }
    } else {
      if (a.target_need < 0 || a.target_need >= kNeedCount) {
        throw ConfigError("ontology: activity with invalid target need: " + a.name);
      }
      if (!(a.gain > 0.0)) throw ConfigError("ontology: activity with non-positive gain");
      covered[static_cast<size_t>(a.target_need)]++;
    }
    if (std::abs(a.style.norm() - 1.0) > 1e-9) {
      throw ConfigError("ontology: style profile not unit-norm: " + a.name);
    }
  }
  if (movement != 4) throw ConfigError("ontology: expected exactly 4 movement actions");
  int per_need = version == 1 ? 1 : 2;
  for (int n = 0; n < kNeedCount; ++n) {
    if (covered[static_cast<size_t>(n)] != per_need) {
      throw ConfigError("ontology: need coverage violated for " + std::string(need_name(n)));
    }
  }
}

ActionOntology ActionOntology::v1() { return build(1, v1_rows()); }
ActionOntology ActionOntology::v3() { return build(3, v3_rows()); }

ActionOntology ActionOntology::by_version(int version) {
  if (version == 1) return v1();
  if (version == 3) return v3();
  throw ConfigError("ActionOntology: version must be 1 or 3");
}

std::string ontology_constants_dump(const ActionOntology& ont) {
  std::ostringstream os;
  os.precision(17);
  os << "ontology v" << ont.version << "\n";
  for (const auto& a : ont.actions) {
    os << a.id << ' ' << a.name << ' ' << a.is_movement << ' ' << a.dx << ' ' << a.dy << ' '
       << a.target_need << ' ' << a.gain << ' ' << a.social_targeting;
    for (int i = 0; i < kTraitCount; ++i) os << ' ' << a.style[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace personarl
