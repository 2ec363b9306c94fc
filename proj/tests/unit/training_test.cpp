#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "support/gradcheck.hpp"
#include "xlac/synthdata/corpus.hpp"
#include "xlac/training/optimizer.hpp"
#include "xlac/training/trainer.hpp"

using namespace xlac;
using xlac::testing::standard_contexts;

namespace {

// Two classes in runs of 6 frames; class c sits at +-2 on every dimension.
Corpus toy_corpus(std::uint64_t seed, std::size_t utts = 20, std::size_t len = 30, std::size_t dim = 4,
                  std::uint32_t classes = 2) {
  Rng r(seed);
  Corpus c;
  c.feature_dim = dim;
  for (std::size_t u = 0; u < utts; ++u) {
    Utterance utt;
    utt.id = "u" + std::to_string(u);
    utt.language = "toy";
    utt.domain = "src";
    utt.frames = Matrix(len, dim);
    std::uint32_t label = static_cast<std::uint32_t>(r.below(classes));
    for (std::size_t t = 0; t < len; ++t) {
      if (t % 6 == 0) label = static_cast<std::uint32_t>(r.below(classes));
      utt.labels.push_back(label);
      for (std::size_t j = 0; j < dim; ++j)
        utt.frames(t, j) = (label % 2 == 0 ? -2.0 : 2.0) * (j % 2 == 0 ? 1.0 : -1.0) +
                           0.5 * static_cast<double>(label / 2) + 0.7 * r.normal();
    }
    c.utterances.push_back(std::move(utt));
  }
  return c;
}

Network small_net(std::size_t dim, std::map<std::string, std::size_t> heads, std::uint64_t seed = 1) {
  return build_network(make_tdnn_spec(dim, 16, standard_contexts(), 16, heads), Rng(seed));
}

TrainConfig quick(double epochs = 2, std::uint64_t seed = 1) {
  TrainConfig c;
  c.initial_lr = 0.05;
  c.epochs = epochs;
  c.minibatch = 32;
  c.chunk_frames = 8;
  c.seed = seed;
  return c;
}

double frame_error(const Network& net, const std::string& task, const Corpus& c) {
  std::size_t wrong = 0, total = 0;
  for (const auto& u : c.utterances) {
    const Matrix logits = forward(net, task, u.frames).logits();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      auto row = logits.row(t);
      const auto best = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      wrong += best != u.labels[t];
      ++total;
    }
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(total);
}

TEST(Schedule, PaperEndpointsExact) {
  TrainConfig c;  // full-scale defaults
  EXPECT_EQ(lr_schedule(c, 0.0), 0.0015);
  EXPECT_EQ(lr_schedule(c, 1.0), 0.00015);
  EXPECT_NEAR(lr_schedule(c, 0.5), 0.0015 / std::sqrt(10.0), 1e-15);
  double prev = lr_schedule(c, 0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double v = lr_schedule(c, i / 1000.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
  EXPECT_THROW(lr_schedule(c, 1.5), Error);
  c.continue_decay = true;
  EXPECT_EQ(lr_schedule(c, 0.0), 0.00015);
  EXPECT_EQ(lr_schedule(c, 1.0), 0.000015);
}

TEST(Schedule, ConfigValidation) {
  TrainConfig c;
  c.final_lr_factor = 0.5;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), Error);
}

LayerGrad filled_grad(const LayerParams& p, double v) {
  LayerGrad g{Matrix(p.weight.rows(), p.weight.cols(), v), std::vector<double>(p.bias.size(), v)};
  return g;
}

TEST(MaxChange, ClipsToExactlyTheCap) {
  Network net = small_net(4, {{"a", 2}});
  const Network before = net;
  Gradients g(net.layer_count());
  g[0] = filled_grad(net.layers[0], 1e3);   // far over the cap
  g[1] = filled_grad(net.layers[1], 1e-3);  // under it
  const ClipReport r = apply_update(net, g, 0.01, FreezeMask::all(net), 2.0);
  EXPECT_TRUE(r.clipped[0]);
  EXPECT_FALSE(r.clipped[1]);
  EXPECT_EQ(r.applied_norm[0], 2.0);
  for (std::size_t l : {0u, 1u}) {
    double sq = 0;
    for (std::size_t i = 0; i < net.layers[l].weight.size(); ++i) {
      const double d = net.layers[l].weight.data()[i] - before.layers[l].weight.data()[i];
      sq += d * d;
    }
    for (std::size_t i = 0; i < net.layers[l].bias.size(); ++i) {
      const double d = net.layers[l].bias[i] - before.layers[l].bias[i];
      sq += d * d;
    }
    EXPECT_LE(std::sqrt(sq), 2.0 * (1 + 1e-12));
  }
  // Unclipped step is exactly -lr * grad.
  EXPECT_EQ(net.layers[1].bias[0], before.layers[1].bias[0] - 0.01 * 1e-3);
  for (std::size_t l = 2; l < net.layer_count(); ++l) EXPECT_TRUE(bitwise_equal(net.layers[l], before.layers[l]));
}

TEST(MaxChange, FrozenLayerUntouchedAndNonFiniteRejected) {
  Network net = small_net(4, {{"a", 2}});
  const Network before = net;
  Gradients g(net.layer_count());
  g[0] = filled_grad(net.layers[0], 1.0);
  apply_update(net, g, 0.1, FreezeMask::trunk_prefix(net, 0), 2.0);
  EXPECT_TRUE(bitwise_equal(net.layers[0], before.layers[0]));
  g[0]->weight(0, 0) = std::nan("");
  try {
    apply_update(net, g, 0.1, FreezeMask::all(net), 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Training, AdaptLeavesFrozenLayersBitwise) {
  const Corpus c = toy_corpus(1);
  Network net = small_net(4, {{"a", 2}, {"b", 2}});
  train_multitask(net, {{"a", &c}, {"b", &c}}, quick(1));
  const Network before = net;
  adapt_shared_layers(net, "a", toy_corpus(2), 3, quick(1, 9));
  for (std::size_t i = 0; i < net.layer_count(); ++i)
    EXPECT_EQ(bitwise_equal(net.layers[i], before.layers[i]), i >= 3) << "layer " << i;
  EXPECT_NE(net.provenance.back().find("adapt_shared_layers task=a k_layers=3"), std::string::npos);
}

TEST(Training, AdaptArgumentErrors) {
  const Corpus c = toy_corpus(1);
  Network net = small_net(4, {{"a", 2}});
  EXPECT_THROW(adapt_shared_layers(net, "a", c, 0, quick()), Error);
  EXPECT_THROW(adapt_shared_layers(net, "a", c, 8, quick()), Error);
  EXPECT_THROW(adapt_shared_layers(net, "zz", c, 3, quick()), Error);
  Corpus wide = toy_corpus(1, 2, 10, 5);
  try {
    train_single_task(net, "a", wide, quick());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Training, MultitaskEpochIsExactCover) {
  const Corpus a = toy_corpus(1, 7, 33), b = toy_corpus(2, 3, 50), c = toy_corpus(3, 11, 17);
  const std::map<std::string, const Corpus*> corpora{{"a", &a}, {"b", &b}, {"c", &c}};
  const TrainConfig cfg = quick(3);
  std::map<std::string, std::size_t> chunks;
  for (const auto& [t, corp] : corpora) chunks[t] = make_chunks(*corp, cfg.chunk_frames).size();

  Network net = small_net(4, {{"a", 2}, {"b", 2}, {"c", 2}});
  std::vector<std::map<std::string, std::vector<int>>> seen;
  std::size_t steps = 0, per_epoch = 0;
  for (const auto& [t, n] : chunks) per_epoch += (n + cfg.chunks_per_minibatch() - 1) / cfg.chunks_per_minibatch();
  TrainHooks hooks;
  hooks.on_minibatch = [&](const PlanEntry& e) {
    if (steps++ % per_epoch == 0) {
      seen.emplace_back();
      for (const auto& [t, n] : chunks) seen.back()[t].assign(n, 0);
    }
    EXPECT_LE(e.examples.size(), cfg.chunks_per_minibatch());
    for (auto idx : e.examples) ++seen.back()[e.task].at(idx);
  };
  const TrainResult r = train_multitask(net, corpora, cfg, hooks);
  EXPECT_EQ(r.steps_per_epoch, per_epoch);
  ASSERT_EQ(seen.size(), 3u);
  for (const auto& epoch : seen)
    for (const auto& [t, counts] : epoch)
      for (int k : counts) EXPECT_EQ(k, 1) << t;
}

TEST(Training, FractionalEpochStepCount) {
  const Corpus c = toy_corpus(1, 10, 40);
  Network net = small_net(4, {{"a", 2}});
  TrainConfig cfg = quick(0.5);
  const TrainResult r = train_single_task(net, "a", c, cfg);
  // 10 utterances x 5 chunks = 50 examples, 4 per minibatch -> 13 steps per epoch.
  EXPECT_EQ(r.steps_per_epoch, 13u);
  EXPECT_EQ(r.steps, 7u);
  EXPECT_EQ(planned_steps(1.5, 13), 20u);
  EXPECT_EQ(planned_steps(2.0, 13), 26u);
}

TEST(Training, LossDecreasesForNineteenOfTwentySeeds) {
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Corpus c = toy_corpus(100 + seed, 20, 30, 4, 4);
    Network net = small_net(4, {{"a", 4}}, seed);
    const TrainResult r = train_single_task(net, "a", c, quick(2, seed));
    const auto& curve = r.loss_curves.at("a");
    const std::size_t w = std::max<std::size_t>(1, curve.size() / 10);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < w; ++i) {
      first += curve[i];
      last += curve[curve.size() - 1 - i];
    }
    decreased += last < first;
  }
  EXPECT_GE(decreased, 19);
}

TEST(Training, SeparableToyLearned) {
  const Corpus train = toy_corpus(5, 40), test = toy_corpus(6, 10);
  Network net = small_net(4, {{"a", 2}});
  train_single_task(net, "a", train, quick(3));
  EXPECT_LT(frame_error(net, "a", test), 5.0);
}

TEST(Training, SameSeedSameWeights) {
  const Corpus c = toy_corpus(1);
  Network a = small_net(4, {{"a", 2}}), b = small_net(4, {{"a", 2}}), d = small_net(4, {{"a", 2}});
  train_single_task(a, "a", c, quick(1, 3));
  train_single_task(b, "a", c, quick(1, 3));
  train_single_task(d, "a", c, quick(1, 4));
  EXPECT_TRUE(bitwise_equal(a, b));
  EXPECT_FALSE(bitwise_equal(a.layers[0], d.layers[0]));
}

TEST(Training, NonFiniteInputAborts) {
  Corpus c = toy_corpus(1);
  c.utterances[0].frames(3, 1) = std::numeric_limits<double>::infinity();
  Network net = small_net(4, {{"a", 2}});
  TrainConfig cfg = quick(1);
  cfg.minibatch = 10000;  // one step covers the bad frame
  try {
    train_single_task(net, "a", c, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Training, LogRecordsScheduleAndClips) {
  const Corpus c = toy_corpus(1);
  Network net = small_net(4, {{"a", 2}});
  TrainConfig cfg = quick(1);
  cfg.initial_lr = 50;
  cfg.max_change = 0.01;
  std::vector<TrainRecord> log;
  TrainHooks hooks;
  hooks.log = [&](const TrainRecord& r) { log.push_back(r); };
  train_single_task(net, "a", c, cfg, hooks);
  ASSERT_FALSE(log.empty());
  EXPECT_EQ(log.front().lr, 50.0);
  EXPECT_EQ(log.back().lr, 5.0);
  EXPECT_EQ(log.front().stage, "train_single_task");
  EXPECT_FALSE(log.front().clipped_layers.empty());
  EXPECT_EQ(log.front().clipped_layers.front(), "tdnn1");
}

}  // namespace
