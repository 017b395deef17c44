#pragma once

// The full conditioned agent: shared policy and value networks, the
// trajectory encoder, and the trainable projection from raw persona
// embeddings into the conditioning space.

#include "personarl/embedding.hpp"
#include "personarl/env.hpp"
#include "personarl/nets.hpp"

namespace personarl {

struct AgentModel {
  MlpParams policy;  // actor head over actions
  MlpParams value;   // critic head of width one
  EncoderParams encoder;
  ProjectionParams projection;

  template <class Self, class F>
  static void visit_tensors(Self& self, F&& f) {
    MlpParams::visit_tensors(self.policy, f);
    MlpParams::visit_tensors(self.value, f);
    EncoderParams::visit_tensors(self.encoder, f);
    ProjectionParams::visit_tensors(self.projection, f);
  }
  template <class F> void for_each_tensor(F&& f) { visit_tensors(*this, f); }
  template <class F> void for_each_tensor(F&& f) const { visit_tensors(*this, f); }
};

// Builds nets sized for the environment and raw embedding dim. Policy and
// value share the conditioning mode; the encoder reads action one-hots.
AgentModel init_agent(const EnvConfig& env, int raw_dim, CondMode mode, uint64_t seed);

// Projected conditioning vector for one persona.
Vec conditioning(const AgentModel& model, const RawEmbeddingSet& raws, int persona_id);

// Conditioning columns for a batch of persona ids (projection run once per
// distinct id).
Mat conditioning_columns(const AgentModel& model, const RawEmbeddingSet& raws,
                         const std::vector<int>& persona_ids);

// Rollout actor closure over the current parameters. The model and embedding
// set must outlive the returned function.
ActorFn make_actor(const AgentModel& model, const RawEmbeddingSet& raws);

// Action probabilities for given observations under one persona.
Mat policy_probs(const AgentModel& model, const RawEmbeddingSet& raws, int persona_id,
                 const Mat& obs);

}  // namespace personarl
