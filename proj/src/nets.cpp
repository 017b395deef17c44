#include "personarl/nets.hpp"

namespace personarl {

const char* cond_mode_name(CondMode m) { return m == CondMode::film ? "film" : "concat"; }

CondMode cond_mode_from_name(const std::string& name) {
  if (name == "film") return CondMode::film;
  if (name == "concat") return CondMode::concat;
  throw ConfigError("unknown conditioning mode: " + name + " (expected film|concat)");
}

void MlpConfig::validate() const {
  if (in_dim < 1) throw ConfigError("mlp: in_dim must be positive");
  if (out_dim < 1) throw ConfigError("mlp: out_dim must be positive");
  if (embed_dim < 1) throw ConfigError("mlp: embed_dim must be positive");
  if (hidden.empty()) throw ConfigError("mlp: at least one hidden layer required");
  for (int h : hidden)
    if (h < 1) throw ConfigError("mlp: hidden widths must be positive");
}

// --- Init ----------------------------------------------------------------------

static void fill_normal(Mat& m, double std, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = std * rng.normal();
}

static void fill_normal(Vec& v, double std, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std * rng.normal();
}

static Affine init_affine(int out, int in, Rng& rng) {
  Affine a;
  a.W.resize(out, in);
  fill_normal(a.W, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  a.b = Vec::Zero(out);
  return a;
}

MlpParams init_mlp(const MlpConfig& cfg, uint64_t seed, const std::string& name) {
  cfg.validate();
  Rng rng(mix_seed(seed, fnv1a64(name)));
  MlpParams p;
  p.name = name;
  p.cfg = cfg;
  int in = cfg.layer_in_dim();
  for (int h : cfg.hidden) {
    p.trunk.push_back(init_affine(h, in, rng));
    if (cfg.mode == CondMode::film) {
      p.gamma.push_back(init_affine(h, cfg.embed_dim, rng));
      p.beta.push_back(init_affine(h, cfg.embed_dim, rng));
    }
    in = h;
  }
  p.head = init_affine(cfg.out_dim, in, rng);
  return p;
}

// --- Forward ---------------------------------------------------------------------

Mat mlp_forward(const MlpParams& params, const Mat& obs, const Mat& embeds, MlpCache* cache) {
  const MlpConfig& cfg = params.cfg;
  if (obs.rows() != cfg.in_dim) throw StateError("mlp_forward: obs row mismatch");
  if (embeds.rows() != cfg.embed_dim || embeds.cols() != obs.cols())
    throw StateError("mlp_forward: embeds shape mismatch");

  Mat x;
  if (cfg.mode == CondMode::concat) {
    x.resize(cfg.in_dim + cfg.embed_dim, obs.cols());
    x.topRows(cfg.in_dim) = obs;
    x.bottomRows(cfg.embed_dim) = embeds;
  } else {
    x = obs;
  }

  if (cache) {
    *cache = MlpCache{};
    cache->valid = true;
    cache->embeds = embeds;
    cache->xs.push_back(x);
  }

  for (size_t l = 0; l < params.trunk.size(); ++l) {
    Mat z = (params.trunk[l].W * x).colwise() + params.trunk[l].b;
    Mat zt;
    if (cfg.mode == CondMode::film) {
      Mat g = (params.gamma[l].W * embeds).colwise() + params.gamma[l].b;
      Mat bt = (params.beta[l].W * embeds).colwise() + params.beta[l].b;
      zt = ((1.0 + g.array()) * z.array() + bt.array()).matrix();
      if (cache) {
        cache->gs.push_back(std::move(g));
        cache->bs.push_back(std::move(bt));
      }
    } else {
      zt = z;
    }
    x = zt.array().tanh().matrix();
    if (cache) {
      cache->zs.push_back(std::move(z));
      cache->xs.push_back(x);
    }
  }
  return (params.head.W * x).colwise() + params.head.b;
}

// --- Backward --------------------------------------------------------------------

void mlp_backward(const MlpParams& params, const MlpCache& cache, const Mat& d_out,
                  MlpParams& grads, Mat* d_embeds) {
  if (!cache.valid) throw StateError("mlp_backward: no recorded forward cache");
  const MlpConfig& cfg = params.cfg;
  const size_t L = params.trunk.size();
  const Mat& E = cache.embeds;

  grads.head.W += d_out * cache.xs[L].transpose();
  grads.head.b += d_out.rowwise().sum();
  Mat dh = params.head.W.transpose() * d_out;

  for (size_t li = L; li-- > 0;) {
    const Mat& h = cache.xs[li + 1];
    Mat dzt = dh.cwiseProduct((1.0 - h.array().square()).matrix());
    Mat dz;
    if (cfg.mode == CondMode::film) {
      Mat dg = dzt.cwiseProduct(cache.zs[li]);
      dz = dzt.cwiseProduct((1.0 + cache.gs[li].array()).matrix());
      grads.gamma[li].W += dg * E.transpose();
      grads.gamma[li].b += dg.rowwise().sum();
      grads.beta[li].W += dzt * E.transpose();
      grads.beta[li].b += dzt.rowwise().sum();
      if (d_embeds)
        *d_embeds += params.gamma[li].W.transpose() * dg + params.beta[li].W.transpose() * dzt;
    } else {
      dz = std::move(dzt);
    }
    grads.trunk[li].W += dz * cache.xs[li].transpose();
    grads.trunk[li].b += dz.rowwise().sum();
    dh = params.trunk[li].W.transpose() * dz;
  }

  if (cfg.mode == CondMode::concat && d_embeds) *d_embeds += dh.bottomRows(cfg.embed_dim);
}

// --- GRU encoder -------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (input_dim < 1) throw ConfigError("encoder: input_dim must be positive");
  if (hidden_dim < 1) throw ConfigError("encoder: hidden_dim must be positive");
  if (n_layers < 1) throw ConfigError("encoder: n_layers must be positive");
}

// Orthogonal square matrix from the QR decomposition of a Gaussian draw, with
// the usual sign fix (columns flipped so diag(R) > 0) for a unique Q.
static Mat orthogonal(int n, Rng& rng) {
  Mat g(n, n);
  fill_normal(g, 1.0, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

EncoderParams init_encoder(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, fnv1a64(std::string("encoder"))));
  EncoderParams p;
  p.cfg = cfg;
  int in = cfg.input_dim;
  for (int l = 0; l < cfg.n_layers; ++l) {
    GruLayerParams g;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(in));
    g.Wr.resize(cfg.hidden_dim, in);
    g.Wz.resize(cfg.hidden_dim, in);
    g.Wn.resize(cfg.hidden_dim, in);
    fill_normal(g.Wr, w_std, rng);
    fill_normal(g.Wz, w_std, rng);
    fill_normal(g.Wn, w_std, rng);
    g.Ur = orthogonal(cfg.hidden_dim, rng);
    g.Uz = orthogonal(cfg.hidden_dim, rng);
    g.Un = orthogonal(cfg.hidden_dim, rng);
    // Gate biases start at N(0, 0.5^2) rather than zero: the shared bias
    // component dominates the one-hot input contribution, so an untrained
    // encoder maps all trajectories near one attractor direction (codes carry
    // no persona signal until the consistency objective shapes them), while
    // tanh units stay unsaturated for training.
    g.br = Vec::Zero(cfg.hidden_dim);
    g.bz = Vec::Zero(cfg.hidden_dim);
    g.bn = Vec::Zero(cfg.hidden_dim);
    fill_normal(g.br, kGruBiasStd, rng);
    fill_normal(g.bz, kGruBiasStd, rng);
    fill_normal(g.bn, kGruBiasStd, rng);
    p.layers.push_back(std::move(g));
    in = cfg.hidden_dim;
  }
  return p;
}

static Mat sigmoid(const Mat& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

// Gathers W * onehot(actions) as a column lookup.
static Mat gather_columns(const Mat& w, const std::vector<std::vector<int>>& seqs, int t) {
  Mat out(w.rows(), static_cast<Eigen::Index>(seqs.size()));
  for (size_t b = 0; b < seqs.size(); ++b) out.col(b) = w.col(seqs[b][t]);
  return out;
}

Mat encode_actions(const EncoderParams& params, const std::vector<std::vector<int>>& action_seqs,
                   EncoderCache* cache) {
  const EncoderConfig& cfg = params.cfg;
  const int B = static_cast<int>(action_seqs.size());
  if (B == 0) throw StateError("encode_actions: empty batch");
  const int T = static_cast<int>(action_seqs[0].size());
  if (T == 0) throw StateError("encode_actions: empty sequence");
  for (const auto& seq : action_seqs) {
    if (static_cast<int>(seq.size()) != T)
      throw StateError("encode_actions: sequences must share a length");
    for (int a : seq)
      if (a < 0 || a >= cfg.input_dim) throw StateError("encode_actions: action id out of range");
  }

  const int L = cfg.n_layers, H = cfg.hidden_dim;
  std::vector<std::vector<Mat>> rs(L), zs(L), ns(L), hs(L);
  std::vector<Mat> h(L, Mat::Zero(H, B));

  for (int t = 0; t < T; ++t) {
    for (int l = 0; l < L; ++l) {
      const GruLayerParams& g = params.layers[l];
      Mat wr, wz, wn;
      if (l == 0) {
        wr = gather_columns(g.Wr, action_seqs, t);
        wz = gather_columns(g.Wz, action_seqs, t);
        wn = gather_columns(g.Wn, action_seqs, t);
      } else {
        wr = g.Wr * h[l - 1];
        wz = g.Wz * h[l - 1];
        wn = g.Wn * h[l - 1];
      }
      Mat r = sigmoid((wr + g.Ur * h[l]).colwise() + g.br);
      Mat z = sigmoid((wz + g.Uz * h[l]).colwise() + g.bz);
      Mat n = (((wn + g.Un * r.cwiseProduct(h[l])).colwise() + g.bn).array()).tanh().matrix();
      h[l] = ((1.0 - z.array()) * h[l].array() + z.array() * n.array()).matrix();
      if (cache) {
        rs[l].push_back(r);
        zs[l].push_back(z);
        ns[l].push_back(n);
        hs[l].push_back(h[l]);
      }
    }
  }

  Mat codes(H, B);
  Vec norms(B);
  for (int b = 0; b < B; ++b) {
    norms[b] = h[L - 1].col(b).norm();
    if (!(norms[b] >= 1e-12))
      throw NumericalError("encode_actions: collapsed trajectory code (norm < 1e-12)");
    codes.col(b) = h[L - 1].col(b) / norms[b];
  }
  if (cache) {
    cache->valid = true;
    cache->actions = action_seqs;
    cache->rs = std::move(rs);
    cache->zs = std::move(zs);
    cache->ns = std::move(ns);
    cache->hs = std::move(hs);
    cache->norms = norms;
  }
  return codes;
}

void encoder_backward(const EncoderParams& params, const EncoderCache& cache,
                      const Mat& d_codes, EncoderParams& grads) {
  if (!cache.valid) throw StateError("encoder_backward: no recorded forward cache");
  const EncoderConfig& cfg = params.cfg;
  const int L = cfg.n_layers, H = cfg.hidden_dim;
  const int B = static_cast<int>(cache.actions.size());
  const int T = static_cast<int>(cache.actions[0].size());

  std::vector<Mat> dh(L, Mat::Zero(H, B));
  // Through the final L2 normalization: d = (g - e (e.g)) / norm.
  const Mat& h_final = cache.hs[L - 1][T - 1];
  for (int b = 0; b < B; ++b) {
    Vec e = h_final.col(b) / cache.norms[b];
    dh[L - 1].col(b) = (d_codes.col(b) - e * e.dot(d_codes.col(b))) / cache.norms[b];
  }

  for (int t = T - 1; t >= 0; --t) {
    for (int l = L - 1; l >= 0; --l) {
      const GruLayerParams& g = params.layers[l];
      GruLayerParams& gg = grads.layers[l];
      const Mat& r = cache.rs[l][t];
      const Mat& z = cache.zs[l][t];
      const Mat& n = cache.ns[l][t];
      Mat h_prev = (t == 0) ? Mat::Zero(H, B) : cache.hs[l][t - 1];
      const Mat& dht = dh[l];

      Mat dz_gate = dht.cwiseProduct(n - h_prev);
      Mat dn = dht.cwiseProduct(z);
      Mat carry = dht.cwiseProduct((1.0 - z.array()).matrix());

      Mat dn_pre = dn.cwiseProduct((1.0 - n.array().square()).matrix());
      Mat drh = g.Un.transpose() * dn_pre;
      Mat dr = drh.cwiseProduct(h_prev);
      carry += drh.cwiseProduct(r);
      Mat dr_pre = dr.cwiseProduct((r.array() * (1.0 - r.array())).matrix());
      Mat dz_pre = dz_gate.cwiseProduct((z.array() * (1.0 - z.array())).matrix());

      gg.Un += dn_pre * r.cwiseProduct(h_prev).transpose();
      gg.Ur += dr_pre * h_prev.transpose();
      gg.Uz += dz_pre * h_prev.transpose();
      gg.bn += dn_pre.rowwise().sum();
      gg.br += dr_pre.rowwise().sum();
      gg.bz += dz_pre.rowwise().sum();
      carry += g.Ur.transpose() * dr_pre + g.Uz.transpose() * dz_pre;

      if (l == 0) {
        for (int b = 0; b < B; ++b) {
          int a = cache.actions[b][t];
          gg.Wn.col(a) += dn_pre.col(b);
          gg.Wr.col(a) += dr_pre.col(b);
          gg.Wz.col(a) += dz_pre.col(b);
        }
      } else {
        const Mat& x_t = cache.hs[l - 1][t];
        gg.Wn += dn_pre * x_t.transpose();
        gg.Wr += dr_pre * x_t.transpose();
        gg.Wz += dz_pre * x_t.transpose();
        dh[l - 1] += g.Wn.transpose() * dn_pre + g.Wr.transpose() * dr_pre +
                     g.Wz.transpose() * dz_pre;
      }
      dh[l] = std::move(carry);
    }
  }
}

}  // namespace personarl
