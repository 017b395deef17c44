#pragma once

// Conditioned policy/value MLPs and the trajectory GRU encoder, with
// hand-derived backward passes. All forwards are batched over observation
// columns; caches record exactly what the matching backward needs.

#include "personarl/common.hpp"

#include <string>
#include <vector>

namespace personarl {

// --- Conditioned MLP ----------------------------------------------------------
//
// film:   per hidden layer, z' = (1 + Wg e + bg) .* z + (Wb e + bb) applied to
//         the pre-activation, then tanh. Generators start near identity.
// concat: the conditioning vector is appended to the observation input and
//         the trunk is a plain tanh MLP (no generators).

enum class CondMode { film, concat };
const char* cond_mode_name(CondMode m);
CondMode cond_mode_from_name(const std::string& name);

struct Affine {
  Mat W;
  Vec b;
};

struct MlpConfig {
  int in_dim = 0;    // observation side (conditioning excluded)
  int out_dim = 0;
  int embed_dim = 0;
  std::vector<int> hidden = {256, 256, 128};
  CondMode mode = CondMode::film;

  void validate() const;
  int layer_in_dim() const { return mode == CondMode::concat ? in_dim + embed_dim : in_dim; }
};

struct MlpParams {
  std::string name;  // tensor name prefix, e.g. "policy"
  MlpConfig cfg;
  std::vector<Affine> trunk;         // hidden layers
  std::vector<Affine> gamma, beta;   // FiLM generators; empty in concat mode
  Affine head;

  template <class Self, class F>
  static void visit_tensors(Self& self, F&& f) {
    for (size_t l = 0; l < self.trunk.size(); ++l) {
      const std::string p = self.name + ".trunk" + std::to_string(l);
      f(p + ".W", self.trunk[l].W);
      f(p + ".b", self.trunk[l].b);
      if (!self.gamma.empty()) {
        f(p + ".gamma.W", self.gamma[l].W);
        f(p + ".gamma.b", self.gamma[l].b);
        f(p + ".beta.W", self.beta[l].W);
        f(p + ".beta.b", self.beta[l].b);
      }
    }
    f(self.name + ".head.W", self.head.W);
    f(self.name + ".head.b", self.head.b);
  }
  template <class F> void for_each_tensor(F&& f) { visit_tensors(*this, f); }
  template <class F> void for_each_tensor(F&& f) const { visit_tensors(*this, f); }
};

// Weights ~ N(0, 1/fan_in), biases zero; FiLM generators share the rule with
// fan_in = embed_dim, so conditioning starts as a small perturbation of the
// identity transform.
MlpParams init_mlp(const MlpConfig& cfg, uint64_t seed, const std::string& name);

struct MlpCache {
  bool valid = false;
  Mat embeds;              // embed_dim x B as passed in
  std::vector<Mat> xs;     // layer inputs; xs[0] includes the concat block
  std::vector<Mat> zs;     // pre-FiLM pre-activations
  std::vector<Mat> gs, bs; // FiLM gamma/beta values (film mode)
};

// Returns out_dim x B outputs. obs must be cfg.in_dim x B; embeds
// cfg.embed_dim x B.
Mat mlp_forward(const MlpParams& params, const Mat& obs, const Mat& embeds,
                MlpCache* cache = nullptr);

// Accumulates parameter gradients; optionally accumulates the gradient with
// respect to the conditioning embeddings into d_embeds (embed_dim x B).
void mlp_backward(const MlpParams& params, const MlpCache& cache, const Mat& d_out,
                  MlpParams& grads, Mat* d_embeds = nullptr);

// Total scalar parameter count of any tensor-walkable params struct.
template <class P>
int64_t count_params(const P& params) {
  int64_t n = 0;
  params.for_each_tensor([&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

// Structural copy with all tensors zeroed (gradient accumulators).
template <class P>
P zeros_like(const P& params) {
  P out = params;
  out.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
  return out;
}

// --- GRU trajectory encoder -----------------------------------------------------
//
// Gates (per layer, inputs x_t, previous hidden h):
//   r = sigmoid(Wr x + Ur h + br)
//   z = sigmoid(Wz x + Uz h + bz)
//   n = tanh(Wn x + Un (r .* h) + bn)
//   h' = (1 - z) .* h + z .* n
// The encoder consumes one-hot action columns and returns the L2-normalized
// final hidden state of the top layer.

struct GruLayerParams {
  Mat Wr, Ur, Wz, Uz, Wn, Un;
  Vec br, bz, bn;
};

struct EncoderConfig {
  int input_dim = 0;   // action count
  int hidden_dim = 64;
  int n_layers = 2;

  void validate() const;
};

// GRU init constants: input weights N(0, 1/fan_in), recurrent matrices
// orthogonal, gate biases N(0, kGruBiasStd^2). The nonzero bias scale keeps a
// freshly initialized encoder persona-uninformative (all codes near a shared
// attractor); see init_encoder.
inline constexpr double kGruBiasStd = 0.4;

struct EncoderParams {
  std::string name = "encoder";
  EncoderConfig cfg;
  std::vector<GruLayerParams> layers;

  template <class Self, class F>
  static void visit_tensors(Self& self, F&& f) {
    for (size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = self.name + ".gru" + std::to_string(l);
      auto& g = self.layers[l];
      f(p + ".Wr", g.Wr); f(p + ".Ur", g.Ur); f(p + ".br", g.br);
      f(p + ".Wz", g.Wz); f(p + ".Uz", g.Uz); f(p + ".bz", g.bz);
      f(p + ".Wn", g.Wn); f(p + ".Un", g.Un); f(p + ".bn", g.bn);
    }
  }
  template <class F> void for_each_tensor(F&& f) { visit_tensors(*this, f); }
  template <class F> void for_each_tensor(F&& f) const { visit_tensors(*this, f); }
};

// Input weights ~ N(0, 1/fan_in), recurrent weights orthogonal (QR of a
// Gaussian square matrix with the R-diagonal sign fix), biases zero.
EncoderParams init_encoder(const EncoderConfig& cfg, uint64_t seed);

struct EncoderCache {
  bool valid = false;
  std::vector<std::vector<int>> actions;   // B sequences of length T
  // Indexed [layer][t], matrices hidden_dim x B. hs[l][t] is the hidden AFTER
  // step t; h before step 0 is zero.
  std::vector<std::vector<Mat>> rs, zs, ns, hs;
  Vec norms;                               // pre-normalization norms per sequence
};

// Encodes B equal-length action sequences; returns hidden_dim x B of unit
// columns. Throws NumericalError if a final hidden collapses below 1e-12.
Mat encode_actions(const EncoderParams& params, const std::vector<std::vector<int>>& action_seqs,
                   EncoderCache* cache = nullptr);

// Full BPTT; d_codes is the gradient w.r.t. the normalized codes.
void encoder_backward(const EncoderParams& params, const EncoderCache& cache,
                      const Mat& d_codes, EncoderParams& grads);

}  // namespace personarl
