#include "personarl/agent.hpp"

#include <map>

namespace personarl {

AgentModel init_agent(const EnvConfig& env, int raw_dim, CondMode mode, uint64_t seed) {
  const int obs_dim = observation_dim(env);
  const int act_dim = env.ontology.action_count();

  MlpConfig pol;
  pol.in_dim = obs_dim;
  pol.out_dim = act_dim;
  pol.embed_dim = kEmbedDim;
  pol.mode = mode;
  MlpConfig val = pol;
  val.out_dim = 1;

  EncoderConfig enc;
  enc.input_dim = act_dim;

  AgentModel m;
  m.policy = init_mlp(pol, seed, "policy");
  m.value = init_mlp(val, seed, "value");
  m.encoder = init_encoder(enc, seed);
  m.projection = init_projection(raw_dim, seed);
  return m;
}

Vec conditioning(const AgentModel& model, const RawEmbeddingSet& raws, int persona_id) {
  return project(model.projection, raws.at(persona_id));
}

Mat conditioning_columns(const AgentModel& model, const RawEmbeddingSet& raws,
                         const std::vector<int>& persona_ids) {
  std::map<int, Vec> cache;
  Mat embeds(kEmbedDim, static_cast<Eigen::Index>(persona_ids.size()));
  for (size_t i = 0; i < persona_ids.size(); ++i) {
    auto it = cache.find(persona_ids[i]);
    if (it == cache.end())
      it = cache.emplace(persona_ids[i], conditioning(model, raws, persona_ids[i])).first;
    embeds.col(static_cast<Eigen::Index>(i)) = it->second;
  }
  return embeds;
}

ActorFn make_actor(const AgentModel& model, const RawEmbeddingSet& raws) {
  return [&model, &raws](const Mat& obs, const std::vector<int>& persona_ids, Mat& probs,
                         Vec* values) {
    Mat embeds = conditioning_columns(model, raws, persona_ids);
    probs = softmax_columns(mlp_forward(model.policy, obs, embeds));
    if (values) *values = mlp_forward(model.value, obs, embeds).row(0).transpose();
  };
}

Mat policy_probs(const AgentModel& model, const RawEmbeddingSet& raws, int persona_id,
                 const Mat& obs) {
  Vec e = conditioning(model, raws, persona_id);
  Mat embeds(kEmbedDim, obs.cols());
  embeds.colwise() = e;
  return softmax_columns(mlp_forward(model.policy, obs, embeds));
}

}  // namespace personarl
