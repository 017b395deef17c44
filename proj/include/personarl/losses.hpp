#pragma once

// Training objectives with analytic gradients: clipped-surrogate policy loss
// with value and entropy terms, generalized advantage estimation, the
// trajectory-consistency InfoNCE term, and the pairwise KL diversity term.
//
// Loss-level functions SET their gradient outputs; network backward passes
// ACCUMULATE into parameter gradient structs.

#include "personarl/common.hpp"

#include <vector>

namespace personarl {

// --- Generalized advantage estimation -------------------------------------------

// values carries T+1 entries; values[T] bootstraps the tail unless terminal.
Vec compute_gae(const Vec& rewards, const Vec& values, bool terminal, double gamma,
                double lambda);

// --- Clipped surrogate objective --------------------------------------------------

// Stable log softmax probability of each chosen action, one column per sample.
Vec logp_of_actions(const Mat& logits, const std::vector<int>& actions);

struct PpoStats {
  double loss = 0;         // full objective (policy + value_coef*mse - ent_coef*H)
  double policy_loss = 0;  // -E[min(ratio A, clip(ratio) A)]
  double value_loss = 0;   // E[(v - return)^2], reported before value_coef
  double entropy = 0;      // mean policy entropy
  double clip_frac = 0;    // fraction of samples where the clipped branch was
                           // the strict minimum (gradient suppressed)
};

// d_logits (act x m) and d_v (m) receive the gradients of `loss`.
PpoStats ppo_loss_and_grad(const Mat& logits, const std::vector<int>& actions,
                           const Vec& old_logp, const Vec& advantages, const Vec& v_pred,
                           const Vec& returns, double clip_eps, double value_coef,
                           double entropy_coef, Mat* d_logits = nullptr, Vec* d_v = nullptr);

// --- Trajectory-consistency InfoNCE ----------------------------------------------

// Kernel over an explicit similarity matrix, sims(i, j) = sim(code_i, embed_j):
//   L = -(1/B) sum_i log( exp(s_ii/T) / sum_j exp(s_ij/T) )
// d_sims(i, j) = (softmax_row_i(j) - delta_ij) / (B T).
double infonce_from_sims(const Mat& sims, double temperature, Mat* d_sims = nullptr);

// codes and embeds are unit columns (embed_dim x B), aligned by position:
// column i of embeds is the positive for column i of codes. If persona_ids is
// given, duplicate ids are rejected (duplicates would label matching pairs as
// negatives). Gradients flow to both sides.
double infonce_loss(const Mat& codes, const Mat& embeds, double temperature,
                    Mat* d_codes = nullptr, Mat* d_embeds = nullptr,
                    const std::vector<int>* persona_ids = nullptr);

// --- Pairwise KL diversity ---------------------------------------------------------

// probs[p] holds action probabilities over shared probe states (act x S).
// Loss is the negated mean of KL(P||Q) over ordered persona pairs p != q and
// states; minimizing it pushes conditioned policies apart. Probabilities are
// floored at 1e-12 inside logs. d_logits[p] receives the gradient w.r.t. the
// logits behind probs[p].
double kl_diversity_from_probs(const std::vector<Mat>& probs,
                               std::vector<Mat>* d_logits = nullptr);

}  // namespace personarl
