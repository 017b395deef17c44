#include "personarl/losses.hpp"

#include <set>

namespace personarl {

Vec compute_gae(const Vec& rewards, const Vec& values, bool terminal, double gamma,
                double lambda) {
  const int T = static_cast<int>(rewards.size());
  if (values.size() != T + 1)
    throw StateError("compute_gae: values must have T+1 entries (bootstrap last)");
  Vec adv(T);
  double running = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    double next_v = (t + 1 == T) ? (terminal ? 0.0 : values[T]) : values[t + 1];
    double delta = rewards[t] + gamma * next_v - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

Vec logp_of_actions(const Mat& logits, const std::vector<int>& actions) {
  if (static_cast<Eigen::Index>(actions.size()) != logits.cols())
    throw StateError("logp_of_actions: one action per logit column required");
  Vec out(logits.cols());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    double mx = logits.col(i).maxCoeff();
    double lse = std::log((logits.col(i).array() - mx).exp().sum());
    out[i] = logits(actions[i], i) - mx - lse;
  }
  return out;
}

PpoStats ppo_loss_and_grad(const Mat& logits, const std::vector<int>& actions,
                           const Vec& old_logp, const Vec& advantages, const Vec& v_pred,
                           const Vec& returns, double clip_eps, double value_coef,
                           double entropy_coef, Mat* d_logits, Vec* d_v) {
  const Eigen::Index m = logits.cols();
  if (static_cast<Eigen::Index>(actions.size()) != m || old_logp.size() != m ||
      advantages.size() != m || v_pred.size() != m || returns.size() != m)
    throw StateError("ppo_loss_and_grad: batch size mismatch");

  Mat probs = softmax_columns(logits);
  Vec logp = logp_of_actions(logits, actions);
  PpoStats stats;
  if (d_logits) d_logits->setZero(logits.rows(), m);
  if (d_v) d_v->resize(m);

  for (Eigen::Index i = 0; i < m; ++i) {
    const double a = advantages[i];
    const double ratio = std::exp(logp[i] - old_logp[i]);
    const double clipped_ratio = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    const double unclipped = ratio * a;
    const double clipped = clipped_ratio * a;
    const bool clip_active = clipped < unclipped;
    stats.policy_loss += -std::min(unclipped, clipped) / m;
    if (clip_active) stats.clip_frac += 1.0 / m;

    const Vec p = probs.col(i);
    double entropy = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
      entropy -= p[k] * std::log(std::max(p[k], 1e-12));
    stats.entropy += entropy / m;

    if (d_logits) {
      Vec dcol = Vec::Zero(p.size());
      if (!clip_active) {
        // d(-ratio*A)/dlogp = -A*ratio, chained through dlogp/dlogits.
        Vec dlogp = -p;
        dlogp[actions[i]] += 1.0;
        dcol += (-a * ratio / m) * dlogp;
      }
      // d(-c_H * H)/dlogit_k with dH/dlogit_k = -p_k (log p_k + H).
      for (Eigen::Index k = 0; k < p.size(); ++k)
        dcol[k] += entropy_coef * p[k] * (std::log(std::max(p[k], 1e-12)) + entropy) / m;
      d_logits->col(i) = dcol;
    }
    const double verr = v_pred[i] - returns[i];
    stats.value_loss += verr * verr / m;
    if (d_v) (*d_v)[i] = value_coef * 2.0 * verr / m;
  }
  stats.loss = stats.policy_loss + value_coef * stats.value_loss - entropy_coef * stats.entropy;
  return stats;
}

double infonce_from_sims(const Mat& sims, double temperature, Mat* d_sims) {
  const Eigen::Index B = sims.rows();
  if (sims.cols() != B) throw StateError("infonce_from_sims: similarity matrix must be square");
  if (!(temperature > 0)) throw ConfigError("infonce: temperature must be positive");

  double loss = 0.0;
  if (d_sims) d_sims->setZero(B, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    Vec row = sims.row(i).transpose() / temperature;
    double mx = row.maxCoeff();
    Vec ex = (row.array() - mx).exp();
    double z = ex.sum();
    loss += -(row[i] - mx - std::log(z)) / B;
    if (d_sims)
      for (Eigen::Index j = 0; j < B; ++j)
        (*d_sims)(i, j) = (ex[j] / z - (i == j ? 1.0 : 0.0)) / (B * temperature);
  }
  return loss;
}

double infonce_loss(const Mat& codes, const Mat& embeds, double temperature, Mat* d_codes,
                    Mat* d_embeds, const std::vector<int>* persona_ids) {
  if (codes.rows() != embeds.rows() || codes.cols() != embeds.cols())
    throw StateError("infonce_loss: codes and embeds must share a shape");
  if (persona_ids) {
    if (static_cast<Eigen::Index>(persona_ids->size()) != codes.cols())
      throw StateError("infonce_loss: persona_ids size mismatch");
    std::set<int> unique(persona_ids->begin(), persona_ids->end());
    if (static_cast<Eigen::Index>(unique.size()) != codes.cols())
      throw ProtocolError(
          "infonce_loss: duplicate persona ids in a contrastive batch (matching "
          "pairs would be treated as negatives)");
  }
  Mat sims = codes.transpose() * embeds;
  Mat d_sims;
  double loss = infonce_from_sims(sims, temperature, (d_codes || d_embeds) ? &d_sims : nullptr);
  if (d_codes) *d_codes = embeds * d_sims.transpose();
  if (d_embeds) *d_embeds = codes * d_sims;
  return loss;
}

double kl_diversity_from_probs(const std::vector<Mat>& probs, std::vector<Mat>* d_logits) {
  const int P = static_cast<int>(probs.size());
  if (P < 2) throw StateError("kl_diversity: at least two personas required");
  const Eigen::Index S = probs[0].cols(), A = probs[0].rows();
  for (const Mat& m : probs)
    if (m.rows() != A || m.cols() != S)
      throw StateError("kl_diversity: probability matrices must share a shape");

  std::vector<Mat> logs(P);
  for (int p = 0; p < P; ++p) logs[p] = probs[p].array().max(1e-12).log().matrix();
  if (d_logits) {
    d_logits->assign(P, Mat::Zero(A, S));
  }

  const double scale = 1.0 / (static_cast<double>(P) * (P - 1) * S);
  double loss = 0.0;
  for (int p = 0; p < P; ++p) {
    for (int q = 0; q < P; ++q) {
      if (q == p) continue;
      Mat diff = logs[p] - logs[q];                       // log P - log Q
      Mat contrib = probs[p].cwiseProduct(diff);          // per-entry P (log P - log Q)
      Eigen::RowVectorXd kl = contrib.colwise().sum();    // KL per state
      loss -= kl.sum() * scale;
      if (d_logits) {
        // dKL/dz_P,k = p_k ((log p_k - log q_k) - KL); dKL/dz_Q,k = q_k - p_k.
        Mat dp = probs[p].cwiseProduct(diff - Vec::Ones(A) * kl);
        (*d_logits)[p] -= scale * dp;
        (*d_logits)[q] -= scale * (probs[q] - probs[p]);
      }
    }
  }
  return loss;
}

}  // namespace personarl
