#include <doctest.h>

#include "oracles.hpp"
#include "personarl/adam.hpp"
#include "personarl/embedding.hpp"
#include "personarl/nets.hpp"

using namespace personarl;

namespace {

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

MlpConfig small_cfg(CondMode mode) {
  MlpConfig cfg;
  cfg.in_dim = 9;
  cfg.out_dim = 4;
  cfg.embed_dim = 8;
  cfg.hidden = {7, 6, 5};
  cfg.mode = mode;
  return cfg;
}

// Naive layer-by-layer forward with triple-loop matmuls.
Mat naive_mlp_forward(const MlpParams& p, const Mat& obs, const Mat& embeds) {
  Mat x;
  if (p.cfg.mode == CondMode::concat) {
    x.resize(obs.rows() + embeds.rows(), obs.cols());
    x << obs, embeds;
  } else {
    x = obs;
  }
  for (size_t l = 0; l < p.trunk.size(); ++l) {
    Mat z = oracles::naive_affine(p.trunk[l].W, p.trunk[l].b, x);
    if (p.cfg.mode == CondMode::film) {
      Mat g = oracles::naive_affine(p.gamma[l].W, p.gamma[l].b, embeds);
      Mat bt = oracles::naive_affine(p.beta[l].W, p.beta[l].b, embeds);
      for (int j = 0; j < z.cols(); ++j)
        for (int i = 0; i < z.rows(); ++i)
          z(i, j) = (1.0 + g(i, j)) * z(i, j) + bt(i, j);
    }
    for (int j = 0; j < z.cols(); ++j)
      for (int i = 0; i < z.rows(); ++i) z(i, j) = std::tanh(z(i, j));
    x = z;
  }
  return oracles::naive_affine(p.head.W, p.head.b, x);
}

// Naive two-matrix GRU unroll, one scalar at a time.
Mat naive_encode(const EncoderParams& p, const std::vector<std::vector<int>>& seqs) {
  const int H = p.cfg.hidden_dim, B = static_cast<int>(seqs.size());
  const int T = static_cast<int>(seqs[0].size());
  std::vector<Mat> h(p.cfg.n_layers, Mat::Zero(H, B));
  for (int t = 0; t < T; ++t) {
    for (int l = 0; l < p.cfg.n_layers; ++l) {
      const GruLayerParams& g = p.layers[l];
      Mat x;
      if (l == 0) {
        x = Mat::Zero(p.cfg.input_dim, B);
        for (int b = 0; b < B; ++b) x(seqs[b][t], b) = 1.0;
      } else {
        x = h[l - 1];
      }
      Mat hx = h[l];
      for (int b = 0; b < B; ++b) {
        Vec r(H), z(H), n(H);
        for (int i = 0; i < H; ++i) {
          double pr = g.br[i], pz = g.bz[i];
          for (int k = 0; k < x.rows(); ++k) {
            pr += g.Wr(i, k) * x(k, b);
            pz += g.Wz(i, k) * x(k, b);
          }
          for (int k = 0; k < H; ++k) {
            pr += g.Ur(i, k) * hx(k, b);
            pz += g.Uz(i, k) * hx(k, b);
          }
          r[i] = oracles::sigmoid(pr);
          z[i] = oracles::sigmoid(pz);
        }
        for (int i = 0; i < H; ++i) {
          double pn = g.bn[i];
          for (int k = 0; k < x.rows(); ++k) pn += g.Wn(i, k) * x(k, b);
          for (int k = 0; k < H; ++k) pn += g.Un(i, k) * (r[k] * hx(k, b));
          n[i] = std::tanh(pn);
        }
        for (int i = 0; i < H; ++i)
          h[l](i, b) = (1.0 - z[i]) * hx(i, b) + z[i] * n[i];
      }
    }
  }
  Mat codes = h[p.cfg.n_layers - 1];
  for (int b = 0; b < B; ++b) codes.col(b) /= codes.col(b).norm();
  return codes;
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("conditioned mlp forward matches the naive oracle in both modes") {
  Rng rng(5);
  for (CondMode mode : {CondMode::film, CondMode::concat}) {
    MlpConfig cfg = small_cfg(mode);
    MlpParams p = init_mlp(cfg, 3, "policy");
    Mat obs = random_mat(cfg.in_dim, 3, rng);
    Mat embeds = random_mat(cfg.embed_dim, 3, rng);
    for (int j = 0; j < 3; ++j) embeds.col(j).normalize();

    Mat out = mlp_forward(p, obs, embeds);
    Mat expected = naive_mlp_forward(p, obs, embeds);
    REQUIRE(out.rows() == 4);
    CHECK((out - expected).lpNorm<Eigen::Infinity>() < 1e-10);

    // Conditioning must matter: different embedding, different output.
    Mat other = embeds;
    other.col(0) = -other.col(0);
    Mat out2 = mlp_forward(p, obs, other);
    CHECK((out.col(0) - out2.col(0)).norm() > 1e-8);
    CHECK((out.col(1) - out2.col(1)).norm() == 0.0);  // untouched column
  }
}

TEST_CASE("mlp backward agrees with central differences for params and embeds") {
  Rng rng(6);
  for (CondMode mode : {CondMode::film, CondMode::concat}) {
    CAPTURE(cond_mode_name(mode));
    MlpConfig cfg = small_cfg(mode);
    MlpParams p = init_mlp(cfg, 4, "policy");
    const int B = 2;
    Mat obs = random_mat(cfg.in_dim, B, rng);
    Mat embeds = random_mat(cfg.embed_dim, B, rng);
    Mat probe = random_mat(cfg.out_dim, B, rng);

    MlpParams grads = zeros_like(p);
    Mat d_embeds = Mat::Zero(cfg.embed_dim, B);
    MlpCache cache;
    mlp_forward(p, obs, embeds, &cache);
    mlp_backward(p, cache, probe, grads, &d_embeds);

    auto loss = [&]() { return (probe.array() * mlp_forward(p, obs, embeds).array()).sum(); };
    auto prefs = oracles::tensor_refs(p);
    auto grefs = oracles::tensor_refs(grads);
    oracles::FdEntry worst = oracles::fd_max_err(prefs, grefs, loss);
    CHECK_MESSAGE(worst.rel_err < 1e-4, worst.name, "[", worst.index,
                  "] analytic=", worst.analytic, " numeric=", worst.numeric);

    oracles::FdEntry eworst = oracles::fd_matrix_err(embeds, d_embeds, loss);
    CHECK_MESSAGE(eworst.rel_err < 1e-4, "embeds analytic=", eworst.analytic,
                  " numeric=", eworst.numeric);
  }
}

TEST_CASE("gru encoder forward matches a naive unroll and emits unit codes") {
  EncoderConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dim = 6;
  cfg.n_layers = 2;
  EncoderParams p = init_encoder(cfg, 17);

  Rng rng(8);
  std::vector<std::vector<int>> seqs(3, std::vector<int>(9));
  for (auto& s : seqs)
    for (int& a : s) a = rng.uniform_int(cfg.input_dim);

  Mat codes = encode_actions(p, seqs);
  Mat expected = naive_encode(p, seqs);
  REQUIRE(codes.cols() == 3);
  CHECK((codes - expected).lpNorm<Eigen::Infinity>() < 1e-10);
  for (int b = 0; b < 3; ++b)
    CHECK(codes.col(b).norm() == doctest::Approx(1.0).epsilon(1e-12));

  // Permuting a sequence changes its code (order sensitivity).
  auto swapped = seqs;
  std::swap(swapped[0][1], swapped[0][5]);
  if (seqs[0][1] != seqs[0][5]) {
    Mat codes2 = encode_actions(p, swapped);
    CHECK((codes.col(0) - codes2.col(0)).norm() > 1e-10);
    CHECK((codes.col(1) - codes2.col(1)).norm() == 0.0);
  }

  CHECK_THROWS_AS(encode_actions(p, {}), StateError);
  CHECK_THROWS_AS(encode_actions(p, {{0, 1}, {0}}), StateError);
  CHECK_THROWS_AS(encode_actions(p, {{0, 99}}), StateError);
}

TEST_CASE("gru backward agrees with central differences through BPTT") {
  EncoderConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dim = 6;
  cfg.n_layers = 2;
  EncoderParams p = init_encoder(cfg, 18);

  Rng rng(9);
  std::vector<std::vector<int>> seqs(2, std::vector<int>(7));
  for (auto& s : seqs)
    for (int& a : s) a = rng.uniform_int(cfg.input_dim);
  Mat probe = random_mat(cfg.hidden_dim, 2, rng);

  EncoderParams grads = zeros_like(p);
  EncoderCache cache;
  encode_actions(p, seqs, &cache);
  encoder_backward(p, cache, probe, grads);

  auto loss = [&]() { return (probe.array() * encode_actions(p, seqs).array()).sum(); };
  auto prefs = oracles::tensor_refs(p);
  auto grefs = oracles::tensor_refs(grads);
  oracles::FdEntry worst = oracles::fd_max_err(prefs, grefs, loss);
  CHECK_MESSAGE(worst.rel_err < 1e-4, worst.name, "[", worst.index,
                "] analytic=", worst.analytic, " numeric=", worst.numeric);

  EncoderCache empty;
  CHECK_THROWS_AS(encoder_backward(p, empty, probe, grads), StateError);
}

TEST_CASE("initializers are deterministic with the documented statistics") {
  MlpConfig cfg;
  cfg.in_dim = 33;
  cfg.out_dim = 20;
  cfg.embed_dim = 64;
  MlpParams a = init_mlp(cfg, 7, "policy");
  MlpParams b = init_mlp(cfg, 7, "policy");
  MlpParams c = init_mlp(cfg, 8, "policy");
  CHECK(a.trunk[0].W == b.trunk[0].W);
  CHECK(a.trunk[0].W != c.trunk[0].W);
  CHECK(init_mlp(cfg, 7, "value").trunk[0].W != a.trunk[0].W);  // name feeds the stream
  CHECK(a.trunk[0].b.norm() == 0.0);
  CHECK(a.gamma[1].b.norm() == 0.0);
  double std0 = std::sqrt(a.trunk[1].W.array().square().mean());
  CHECK(std0 == doctest::Approx(1.0 / 16.0).epsilon(0.15));  // fan_in 256
  double stdg = std::sqrt(a.gamma[0].W.array().square().mean());
  CHECK(stdg == doctest::Approx(1.0 / 8.0).epsilon(0.15));  // fan_in 64

  // Parameter count against an independent shape walk.
  int64_t expected = 0;
  int in = 33;
  for (int h : {256, 256, 128}) {
    expected += static_cast<int64_t>(h) * in + h;    // trunk
    expected += 2 * (static_cast<int64_t>(h) * 64 + h);  // gamma, beta
    in = h;
  }
  expected += 20L * 128 + 20;  // head
  CHECK(count_params(a) == expected);
  CHECK(count_params(a) == 193172);

  // Policy plus projection sits in the documented band.
  ProjectionParams proj = init_projection(1024, 7);
  int64_t total = count_params(a) + count_params(proj);
  CHECK(total == 210580);
  CHECK(total >= 200000);
  CHECK(total <= 220000);

  EncoderConfig ecfg;
  ecfg.input_dim = 20;
  EncoderParams enc = init_encoder(ecfg, 7);
  CHECK(enc.layers.size() == 2);
  // Recurrent matrices are orthogonal: U^T U = I.
  Mat eye = enc.layers[0].Ur.transpose() * enc.layers[0].Ur;
  CHECK((eye - Mat::Identity(64, 64)).lpNorm<Eigen::Infinity>() < 1e-10);
  Mat eye2 = enc.layers[1].Un.transpose() * enc.layers[1].Un;
  CHECK((eye2 - Mat::Identity(64, 64)).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(init_encoder(ecfg, 7).layers[0].Wr == enc.layers[0].Wr);

  MlpParams z = zeros_like(a);
  CHECK(count_params(z) == count_params(a));
  CHECK(global_norm(z) == 0.0);
}

TEST_CASE("adam takes the canonical bias-corrected first step") {
  ProjectionParams p = init_projection(64, 3);
  ProjectionParams start = p;
  ProjectionParams g = zeros_like(p);
  g.A.setOnes();
  g.B.setOnes();
  AdamState<ProjectionParams> state = make_adam_state(p);

  adam_step(p, g, state, 0.1);
  // First step with unit gradients: delta = -lr * g/(|g| + eps) ~ -lr.
  Mat delta = p.A - start.A;
  CHECK(delta.maxCoeff() == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(delta.minCoeff() == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(state.t == 1);

  // Second identical step: bias corrections keep the step at -lr.
  ProjectionParams p1 = p;
  adam_step(p, g, state, 0.1);
  CHECK((p.A - p1.A).maxCoeff() == doctest::Approx(-0.1).epsilon(1e-6));

  // Optimizing a quadratic pulls parameters toward the target.
  ProjectionParams q = init_projection(64, 4);
  Mat target = Mat::Constant(q.A.rows(), q.A.cols(), 0.5);
  AdamState<ProjectionParams> qs = make_adam_state(q);
  double before = (q.A - target).squaredNorm();
  for (int it = 0; it < 200; ++it) {
    ProjectionParams grad = zeros_like(q);
    grad.A = 2.0 * (q.A - target);
    adam_step(q, grad, qs, 0.01);
  }
  CHECK((q.A - target).squaredNorm() < 0.01 * before);

  // Gradient norm helper: sqrt of the summed squares across tensors.
  ProjectionParams gn = zeros_like(q);
  gn.A.setConstant(2.0);
  gn.B.setZero();
  CHECK(global_norm(gn) ==
        doctest::Approx(2.0 * std::sqrt(static_cast<double>(gn.A.size()))).epsilon(1e-12));
}

}  // TEST_SUITE
