#include "personarl/train.hpp"

#include "personarl/checkpoint.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace personarl;

namespace {

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Deliberately tiny: 2 agents on a 4x4 grid, 16-step episodes, 128-step
// batches. Exercises every code path in seconds.
struct TrainFixture {
  TrainConfig cfg;
  PersonaCorpus corpus;
  RawEmbeddingSet raws;
  std::vector<int> train_ids;

  explicit TrainFixture(Ablation ablation = Ablation::full, uint64_t seed = 3) {
    cfg.env.grid_w = 4;
    cfg.env.grid_h = 4;
    cfg.env.n_agents = 2;
    cfg.env.episode_length = 16;
    cfg.batch_steps = 128;
    cfg.minibatch_size = 32;
    cfg.ppo_epochs = 2;
    cfg.diversity_personas = 4;
    cfg.diversity_states = 8;
    cfg.ablation = ablation;
    cfg.seed = seed;
    corpus = generate_corpus(4, 4, 7, cfg.env.ontology);
    SyntheticEmbedderConfig ecfg;
    ecfg.dim = 64;
    ecfg.seed = 3;
    raws = embed_corpus(corpus, ecfg);
    CorpusSplit split = split_unseen_occupation(corpus, {0});
    train_ids = split.train_ids;  // 12 personas
  }
};

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("config validation catches bad settings") {
  TrainFixture f;
  TrainConfig c = f.cfg;
  c.validate();  // baseline valid

  c.clip_eps = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = f.cfg;
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = f.cfg;
  c.lambda1 = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = f.cfg;
  c.batch_steps = 100;  // not a multiple of 2 agents * 16 steps
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = f.cfg;
  c.minibatch_size = 48;  // does not tile batch_steps
  CHECK_THROWS_AS(c.validate(), ConfigError);

  CHECK(f.cfg.episodes_per_iter() == 4);
  CHECK(std::string(ablation_name(Ablation::no_consist)) == "no_consist");
  CHECK(ablation_from_name("concat") == Ablation::concat);
  CHECK_THROWS_AS(ablation_from_name("bogus"), ConfigError);
  TrainConfig cc = f.cfg;
  cc.ablation = Ablation::concat;
  CHECK(cc.effective_mode() == CondMode::concat);
  CHECK(f.cfg.effective_mode() == CondMode::film);
}

TEST_CASE("trainer rejects undersized train splits") {
  TrainFixture f;
  std::vector<int> tiny = {f.train_ids[0]};
  CHECK_THROWS_AS(Trainer(f.cfg, f.corpus, f.raws, tiny), ConfigError);
  std::vector<int> dup = {f.train_ids[0], f.train_ids[0], f.train_ids[1], f.train_ids[2]};
  CHECK_THROWS_AS(Trainer(f.cfg, f.corpus, f.raws, dup), ConfigError);
}

TEST_CASE("iteration metrics satisfy the combined-objective additivity exactly") {
  TrainFixture f;
  Trainer tr(f.cfg, f.corpus, f.raws, f.train_ids);
  for (int i = 0; i < 3; ++i) {
    IterationMetrics m = tr.run_iteration();
    CHECK(m.iteration == i);
    double reconstructed =
        m.ppo_loss + f.cfg.lambda1 * m.consist_loss + f.cfg.lambda2 * m.diverse_loss;
    CHECK(std::abs(m.total_loss - reconstructed) <= 1e-10);
    CHECK(std::isfinite(m.grad_norm));
    CHECK(m.grad_norm > 0.0);
    CHECK(m.entropy > 0.0);
    CHECK(m.clip_frac >= 0.0);
    CHECK(m.clip_frac <= 1.0);
    CHECK(m.consist_loss >= 0.0);  // InfoNCE lower bound
  }
  CHECK(tr.iteration() == 3);
}

TEST_CASE("ablation switches zero their loss terms") {
  TrainFixture fc(Ablation::no_consist);
  Trainer tc(fc.cfg, fc.corpus, fc.raws, fc.train_ids);
  Mat encoder_before = tc.model().encoder.layers[0].Wr;
  IterationMetrics mc = tc.run_iteration();
  CHECK(mc.consist_loss == 0.0);
  CHECK(mc.diverse_loss != 0.0);
  // Ablation purity: no gradient reaches the encoder.
  CHECK((tc.model().encoder.layers[0].Wr - encoder_before).norm() == 0.0);

  TrainFixture fd(Ablation::no_diverse);
  Trainer td(fd.cfg, fd.corpus, fd.raws, fd.train_ids);
  IterationMetrics md = td.run_iteration();
  CHECK(md.diverse_loss == 0.0);
  CHECK(md.consist_loss > 0.0);

  TrainFixture fx(Ablation::concat);
  Trainer tx(fx.cfg, fx.corpus, fx.raws, fx.train_ids);
  CHECK(tx.model().policy.cfg.mode == CondMode::concat);
  CHECK(tx.model().value.cfg.mode == CondMode::concat);
  IterationMetrics mx = tx.run_iteration();
  CHECK(std::isfinite(mx.total_loss));
}

TEST_CASE("encoder parameters stay bit-identical across a no_consist run") {
  TrainFixture f(Ablation::no_consist);
  Trainer tr(f.cfg, f.corpus, f.raws, f.train_ids);
  AgentModel init = tr.model();
  for (int i = 0; i < 3; ++i) tr.run_iteration();
  bool identical = true;
  size_t idx = 0;
  std::vector<Mat> before;
  init.encoder.for_each_tensor([&](const std::string&, const auto& t) { before.push_back(Mat(t)); });
  tr.model().encoder.for_each_tensor([&](const std::string&, const auto& t) {
    if (Mat(t) != before[idx]) identical = false;
    ++idx;
  });
  CHECK(identical);
  // Policy, by contrast, must have moved.
  CHECK((tr.model().policy.trunk[0].W - init.policy.trunk[0].W).norm() > 0.0);
}

TEST_CASE("training is deterministic: identical seeds give identical streams") {
  TrainFixture f1, f2;
  Trainer a(f1.cfg, f1.corpus, f1.raws, f1.train_ids);
  Trainer b(f2.cfg, f2.corpus, f2.raws, f2.train_ids);
  for (int i = 0; i < 2; ++i) {
    IterationMetrics ma = a.run_iteration();
    IterationMetrics mb = b.run_iteration();
    CHECK(ma.to_json() == mb.to_json());
  }
  bool params_equal = true;
  std::vector<Mat> pa;
  a.model().for_each_tensor([&](const std::string&, const auto& t) { pa.push_back(Mat(t)); });
  size_t i = 0;
  b.model().for_each_tensor([&](const std::string&, const auto& t) {
    if (Mat(t) != pa[i]) params_equal = false;
    ++i;
  });
  CHECK(params_equal);

  TrainFixture f3(Ablation::full, /*seed=*/4);
  Trainer c(f3.cfg, f3.corpus, f3.raws, f3.train_ids);
  IterationMetrics mc = c.run_iteration();
  Trainer d(f1.cfg, f1.corpus, f1.raws, f1.train_ids);
  IterationMetrics md = d.run_iteration();
  CHECK(mc.to_json() != md.to_json());  // seed actually feeds the stream
}

TEST_CASE("checkpoint round-trips bit-exactly and resumes identically") {
  const std::string ck = temp_path("trainer_ck.bin");
  TrainFixture f;

  // Reference: 4 uninterrupted iterations.
  Trainer ref(f.cfg, f.corpus, f.raws, f.train_ids);
  std::vector<std::string> ref_stream;
  for (int i = 0; i < 4; ++i) ref_stream.push_back(ref.run_iteration().to_json());

  // Interrupted: 2 iterations, checkpoint, fresh trainer, resume.
  Trainer first(f.cfg, f.corpus, f.raws, f.train_ids);
  first.run_iteration();
  first.run_iteration();
  first.save_checkpoint(ck);

  Trainer resumed(f.cfg, f.corpus, f.raws, f.train_ids);
  resumed.load_checkpoint(ck);
  CHECK(resumed.iteration() == 2);
  std::vector<std::string> tail;
  tail.push_back(resumed.run_iteration().to_json());
  tail.push_back(resumed.run_iteration().to_json());
  CHECK(tail[0] == ref_stream[2]);
  CHECK(tail[1] == ref_stream[3]);

  // Checkpoint writes are byte-stable.
  const std::string ck2 = temp_path("trainer_ck2.bin");
  resumed.save_checkpoint(ck2);
  Trainer again(f.cfg, f.corpus, f.raws, f.train_ids);
  again.load_checkpoint(ck);
  again.run_iteration();
  again.run_iteration();
  const std::string ck3 = temp_path("trainer_ck3.bin");
  again.save_checkpoint(ck3);
  CHECK(read_file(ck2) == read_file(ck3));

  // Config mismatch is rejected.
  TrainConfig other = f.cfg;
  other.gamma = 0.98;
  Trainer wrong(other, f.corpus, f.raws, f.train_ids);
  CHECK_THROWS_AS(wrong.load_checkpoint(ck), ConfigError);

  std::remove(ck.c_str());
  std::remove(ck2.c_str());
  std::remove(ck3.c_str());
}

TEST_CASE("short optimization makes progress on the tiny config") {
  TrainFixture f;
  f.cfg.env.n_agents = 1;  // single agent, pure needs optimization
  f.cfg.batch_steps = 128;
  Trainer tr(f.cfg, f.corpus, f.raws, f.train_ids);
  std::vector<double> returns;
  for (int i = 0; i < 30; ++i) returns.push_back(tr.run_iteration().mean_return);
  double early = (returns[0] + returns[1] + returns[2]) / 3.0;
  double late = (returns[27] + returns[28] + returns[29]) / 3.0;
  CHECK(late > early);  // reward improves
}

TEST_SUITE_END();
