#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "nestseg/checkpoint.hpp"
#include "nestseg/graph.hpp"
#include "nestseg/optimizer.hpp"
#include "nestseg/synthetic.hpp"
#include "nestseg/trainer.hpp"

#include "test_support.hpp"

using namespace nestseg;

namespace {

Dataset tiny_dataset(std::uint64_t seed, int count, const std::string& dir_name) {
  SyntheticConfig c;
  c.seed = seed;
  c.count = count;
  c.image_size = 32;
  return Dataset::load(generate_synthetic(c, testing::scratch_dir(dir_name)));
}

bool graphs_equal(const ModelGraph& a, const ModelGraph& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t k = 0; k < pa.size(); ++k)
    if (std::memcmp(pa[k]->value.data(), pb[k]->value.data(),
                    sizeof(float) * static_cast<std::size_t>(pa[k]->value.numel())) != 0)
      return false;
  return true;
}

}  // namespace

TEST_CASE("adam: a zero gradient leaves the parameter untouched") {
  Parameter p("p", Tensor({3}, {1.0f, -2.0f, 3.0f}));
  AdamState state;
  state.init({&p});
  TrainConfig c;
  adam_step({&p}, state, c);
  CHECK(p.value[0] == 1.0f);
  CHECK(p.value[1] == -2.0f);
  CHECK(p.value[2] == 3.0f);
  CHECK(state.step == 1);
}

TEST_CASE("adam: the first step moves by the learning rate against the gradient sign") {
  Parameter p("p", Tensor({2}, {0.0f, 0.0f}));
  p.grad[0] = 0.5f;
  p.grad[1] = -0.125f;
  AdamState state;
  state.init({&p});
  TrainConfig c;
  c.learning_rate = 1e-2;
  adam_step({&p}, state, c);
  // bias correction makes m_hat/sqrt(v_hat) equal the gradient sign up to eps
  CHECK(p.value[0] == doctest::Approx(-1e-2).epsilon(1e-5));
  CHECK(p.value[1] == doctest::Approx(1e-2).epsilon(1e-5));
}

TEST_CASE("adam: identical gradient streams move two parameters identically") {
  Parameter a("a", Tensor({4}, {0.1f, 0.2f, 0.3f, 0.4f}));
  Parameter b("b", Tensor({4}, {0.1f, 0.2f, 0.3f, 0.4f}));
  AdamState sa, sb;
  sa.init({&a});
  sb.init({&b});
  TrainConfig c;
  Rng rng(33);
  for (int step = 0; step < 10; ++step) {
    for (std::int64_t i = 0; i < 4; ++i) {
      const float g = static_cast<float>(rng.uniform(-1.0, 1.0));
      a.grad[i] = g;
      b.grad[i] = g;
    }
    adam_step({&a}, sa, c);
    adam_step({&b}, sb, c);
  }
  CHECK(std::memcmp(a.value.data(), b.value.data(), sizeof(float) * 4) == 0);
}

TEST_CASE("adam: a non-finite gradient is rejected, naming the parameter and coordinate") {
  Parameter p("conv.weight", Tensor({2}));
  p.grad[1] = std::nanf("");
  AdamState state;
  state.init({&p});
  TrainConfig c;
  CHECK_THROWS_WITH_AS(adam_step({&p}, state, c), doctest::Contains("conv.weight"), Error);
}

TEST_CASE("adam: state must match the parameter list it was initialized from") {
  Parameter p("p", Tensor({2})), q("q", Tensor({2}));
  AdamState state;
  state.init({&p});
  TrainConfig c;
  CHECK_THROWS_AS(adam_step({&p, &q}, state, c), Error);
}

TEST_CASE("train config: text round trip and unknown keys") {
  TrainConfig c;
  c.learning_rate = 5e-4;
  c.batch_size = 2;
  c.seed = 99;
  const TrainConfig back = parse_train_config(c.canonical_text());
  CHECK(back.canonical_text() == c.canonical_text());
  CHECK(back.seed == 99);
  CHECK_THROWS_WITH_AS(parse_train_config("momentum = 0.9\n"), doctest::Contains("momentum"),
                       Error);
  TrainConfig bad;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("training is deterministic: equal seeds give byte-identical histories and weights") {
  const Dataset data = tiny_dataset(11, 12, "train_det");
  TrainConfig c;
  c.max_epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 5;

  TrainResult results[2];
  for (int round = 0; round < 2; ++round) {
    ModelGraph g = ModelGraph::build(testing::small_unetpp());
    g.initialize_parameters(c.seed);
    results[round] = train(g, data, c);
  }
  CHECK(metrics_csv(results[0].history) == metrics_csv(results[1].history));

  const std::string dir = testing::scratch_dir("train_det_ckpt");
  save_checkpoint(results[0].best, dir + "/a.ckpt");
  save_checkpoint(results[1].best, dir + "/b.ckpt");
  CHECK(testing::read_bytes(dir + "/a.ckpt") == testing::read_bytes(dir + "/b.ckpt"));
  CHECK(testing::read_bytes(dir + "/a.ckpt").size() > 0);
}

TEST_CASE("training learns: a small model masters a small blob set") {
  const Dataset data = tiny_dataset(11, 12, "train_learn");
  ModelGraph g = ModelGraph::build(testing::small_unetpp());
  g.initialize_parameters(3);

  const EvalResult before =
      evaluate(g, data.split(Split::train), ForwardMode::accurate_mode(), 4, false);

  TrainConfig c;
  c.learning_rate = 3e-3;
  c.max_epochs = 60;
  c.early_stop_patience = 60;
  c.seed = 5;
  const TrainResult r = train(g, data, c);
  CHECK_FALSE(r.diverged);
  CHECK(r.epochs_run == 60);
  CHECK(r.best_val_iou >= 0.85);

  restore(r.best, g, nullptr);
  const EvalResult after =
      evaluate(g, data.split(Split::train), ForwardMode::accurate_mode(), 4, false);
  CHECK(after.iou > 0.90);
  CHECK(after.iou > before.iou + 0.5);
  CHECK(after.loss < -0.9);
  CHECK(after.dice >= after.iou);
}

TEST_CASE("early stopping: no validation improvement for `patience` epochs ends the run") {
  const Dataset data = tiny_dataset(11, 12, "train_stall");
  ModelGraph g = ModelGraph::build(testing::small_unetpp());
  g.initialize_parameters(3);
  TrainConfig c;
  c.learning_rate = 1e-30;  // effectively frozen weights: epoch 2 cannot beat epoch 1
  c.max_epochs = 10;
  c.early_stop_patience = 1;
  const TrainResult r = train(g, data, c);
  CHECK(r.epochs_run == 2);
  CHECK(r.best_epoch == 1);
  CHECK(r.history.size() == 4);  // one train and one val row per epoch
}

TEST_CASE("divergence rolls the model back to the last good snapshot") {
  const Dataset data = tiny_dataset(11, 12, "train_diverge");
  ModelGraph g = ModelGraph::build(testing::small_unetpp());
  g.initialize_parameters(3);
  ModelGraph untouched = ModelGraph::build(testing::small_unetpp());
  untouched.initialize_parameters(3);

  TrainConfig c;
  c.learning_rate = 1e30;  // one step throws every weight to +-1e30; the next batch overflows
  c.max_epochs = 3;
  const TrainResult r = train(g, data, c);
  CHECK(r.diverged);
  CHECK(r.best.epoch == 0);
  CHECK(graphs_equal(g, untouched));  // nothing survives from the exploded step
}

TEST_CASE("training rejects empty splits") {
  // 3 samples split 2/0/1: no validation data
  const Dataset data = tiny_dataset(11, 3, "train_noval");
  ModelGraph g = ModelGraph::build(testing::small_unetpp());
  g.initialize_parameters(3);
  TrainConfig c;
  CHECK_THROWS_WITH_AS(train(g, data, c), doctest::Contains("val"), Error);
}

TEST_CASE("evaluation: loss and metrics are batch-size invariant") {
  const Dataset data = tiny_dataset(11, 12, "eval_batch");
  ModelGraph g = ModelGraph::build(testing::small_unetpp());
  g.initialize_parameters(3);
  const auto& train_set = data.split(Split::train);
  const EvalResult a = evaluate(g, train_set, ForwardMode::accurate_mode(), 1, false);
  const EvalResult b = evaluate(g, train_set, ForwardMode::accurate_mode(), 3, false);
  const EvalResult c = evaluate(g, train_set, ForwardMode::accurate_mode(), 100, false);
  CHECK(a.iou == doctest::Approx(b.iou).epsilon(1e-7));
  CHECK(a.dice == doctest::Approx(b.dice).epsilon(1e-7));
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-5));
  CHECK(a.iou == doctest::Approx(c.iou).epsilon(1e-7));
  CHECK(a.loss == doctest::Approx(c.loss).epsilon(1e-5));
  CHECK(a.images == static_cast<int>(train_set.size()));
  CHECK(a.seconds_per_image == 0.0);  // timing was off
  CHECK_THROWS_AS(evaluate(g, {}, ForwardMode::accurate_mode(), 4, false), Error);
}

TEST_CASE("metrics CSV: fixed header, fixed formatting") {
  std::vector<MetricsRow> rows{{1, "train", -0.5, 0.25, 0.4, 0.0},
                               {1, "val", -0.25, 0.125, 0.2222229, 1.5}};
  CHECK(metrics_csv(rows) ==
        "epoch,split,loss,iou,dice,seconds\n"
        "1,train,-0.500000,0.250000,0.400000,0.000\n"
        "1,val,-0.250000,0.125000,0.222223,1.500\n");
}

TEST_CASE("checkpoints: save/load/save produces identical bytes") {
  ModelGraph g = ModelGraph::build(testing::small_unetpp(2, 16));
  g.initialize_parameters(23);
  const Checkpoint ckpt = snapshot(g, nullptr, 3, 0.75);
  const std::string dir = testing::scratch_dir("ckpt_bytes");
  save_checkpoint(ckpt, dir + "/a.ckpt");
  const Checkpoint back = load_checkpoint(dir + "/a.ckpt");
  save_checkpoint(back, dir + "/b.ckpt");
  CHECK(testing::read_bytes(dir + "/a.ckpt") == testing::read_bytes(dir + "/b.ckpt"));
  CHECK(back.epoch == 3);
  CHECK(back.best_val_iou == 0.75);
  CHECK(back.fingerprint == g.spec().fingerprint());
  CHECK(back.records.size() == g.parameters().size());
}

TEST_CASE("checkpoints: restore puts every parameter value back") {
  ModelGraph g = ModelGraph::build(testing::small_unetpp(2, 16));
  g.initialize_parameters(29);
  const Checkpoint ckpt = snapshot(g, nullptr, 1, 0.0);
  for (Parameter* p : g.parameters())
    for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] += 1.0f;
  restore(ckpt, g, nullptr);
  ModelGraph fresh = ModelGraph::build(testing::small_unetpp(2, 16));
  fresh.initialize_parameters(29);
  CHECK(graphs_equal(g, fresh));
}

TEST_CASE("checkpoints: optimizer moments round-trip when both sides carry them") {
  ModelGraph g = ModelGraph::build(testing::small_unetpp(2, 16));
  g.initialize_parameters(31);
  AdamState state;
  state.init(g.parameters());
  state.step = 7;
  state.slots[0].m[0] = 0.5f;
  state.slots[0].v[0] = 0.25f;

  const Checkpoint ckpt = snapshot(g, &state, 2, 0.5);
  CHECK(ckpt.records.size() == 3 * g.parameters().size());

  AdamState other;
  other.init(g.parameters());
  restore(ckpt, g, &other);
  CHECK(other.step == 7);
  CHECK(other.slots[0].m[0] == 0.5f);
  CHECK(other.slots[0].v[0] == 0.25f);

  // a parameter-only snapshot reinitializes the receiving optimizer state:
  // stale moments have no meaning for wholesale-replaced parameters
  const Checkpoint bare = snapshot(g, nullptr, 2, 0.5);
  AdamState stale;
  stale.init(g.parameters());
  stale.step = 3;
  stale.slots[0].m[0] = 9.0f;
  restore(bare, g, &stale);
  CHECK(stale.step == 0);
  CHECK(stale.slots[0].m[0] == 0.0f);
}

TEST_CASE("checkpoints: the architecture fingerprint gates restoration") {
  ModelGraph g = ModelGraph::build(testing::small_unetpp(2, 16));
  g.initialize_parameters(37);
  const Checkpoint ckpt = snapshot(g, nullptr, 1, 0.0);
  ModelGraph other = ModelGraph::build(testing::small_unetpp(3, 16));
  other.initialize_parameters(37);
  CHECK_THROWS_WITH_AS(restore(ckpt, other, nullptr), doctest::Contains("fingerprint"), Error);
}

TEST_CASE("checkpoints: corrupted files are rejected") {
  ModelGraph g = ModelGraph::build(testing::small_unetpp(2, 16));
  g.initialize_parameters(41);
  const std::string dir = testing::scratch_dir("ckpt_corrupt");
  save_checkpoint(snapshot(g, nullptr, 1, 0.0), dir + "/good.ckpt");

  auto bytes = testing::read_bytes(dir + "/good.ckpt");
  bytes[0] = 'X';
  write_text_file(dir + "/magic.ckpt", std::string(bytes.begin(), bytes.end()));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir + "/magic.ckpt"), doctest::Contains("magic"), Error);

  bytes = testing::read_bytes(dir + "/good.ckpt");
  bytes.resize(bytes.size() / 2);
  write_text_file(dir + "/cut.ckpt", std::string(bytes.begin(), bytes.end()));
  CHECK_THROWS_AS(load_checkpoint(dir + "/cut.ckpt"), Error);

  bytes = testing::read_bytes(dir + "/good.ckpt");
  bytes.push_back('\0');
  write_text_file(dir + "/extra.ckpt", std::string(bytes.begin(), bytes.end()));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir + "/extra.ckpt"), doctest::Contains("trailing"),
                       Error);
}
