#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xlac/model/forward.hpp"
#include "xlac/model/network.hpp"
#include "xlac/numerics/rng.hpp"
#include "xlac/synthdata/corpus.hpp"
#include "xlac/training/optimizer.hpp"

namespace xlac {

/// A training example: `end - begin` consecutive frames of one utterance.
struct Chunk {
  std::uint32_t utterance;
  std::uint32_t begin, end;
};

inline std::vector<Chunk> make_chunks(const Corpus& corpus, std::size_t chunk_frames) {
  std::vector<Chunk> chunks;
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    const std::size_t t_count = corpus.utterances[u].frames.rows();
    for (std::size_t b = 0; b < t_count; b += chunk_frames)
      chunks.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(b),
                        static_cast<std::uint32_t>(std::min(t_count, b + chunk_frames))});
  }
  return chunks;
}

struct PlanEntry {
  std::string task;
  std::vector<std::uint32_t> examples;  // chunk indices within the task's corpus
};

/// One epoch of minibatches over all tasks. Each task's examples are shuffled
/// and cut into minibatches; the minibatches of all tasks are then shuffled
/// together. Every example appears exactly once and no task is reweighted.
struct TaskBatchPlan {
  std::vector<PlanEntry> entries;

  static TaskBatchPlan build(const std::vector<std::pair<std::string, std::size_t>>& example_counts,
                             std::size_t per_batch, Rng rng) {
    TaskBatchPlan plan;
    for (const auto& [task, count] : example_counts) {
      std::vector<std::uint32_t> order(count);
      for (std::size_t i = 0; i < count; ++i) order[i] = static_cast<std::uint32_t>(i);
      Rng task_rng = rng.derive("task/" + task);
      task_rng.shuffle(std::span<std::uint32_t>(order));
      for (std::size_t b = 0; b < count; b += per_batch) {
        const auto first = order.begin() + static_cast<long>(b);
        const auto last = order.begin() + static_cast<long>(std::min(count, b + per_batch));
        plan.entries.push_back({task, std::vector<std::uint32_t>(first, last)});
      }
    }
    Rng mix = rng.derive("interleave");
    mix.shuffle(std::span<PlanEntry>(plan.entries));
    return plan;
  }
};

/// One line of the training log.
struct TrainRecord {
  std::string stage;
  std::size_t step = 0;
  std::string task;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<std::string> clipped_layers;
};

struct TrainHooks {
  std::function<void(const TrainRecord&)> log;
  std::function<void(const PlanEntry&)> on_minibatch;
  Preconditioner precondition;
};

struct TrainResult {
  std::map<std::string, std::vector<double>> loss_curves;  // per-step minibatch loss by task
  std::size_t steps = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t clip_events = 0;
};

/// Number of updates for a (possibly fractional) number of epochs.
inline std::size_t planned_steps(double epochs, std::size_t steps_per_epoch) {
  return static_cast<std::size_t>(std::ceil(epochs * static_cast<double>(steps_per_epoch) - 1e-9));
}

namespace detail {

struct TaskData {
  std::string name;
  const Corpus* corpus;
  std::vector<Chunk> chunks;
};

inline std::string format_epochs(double e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

inline TrainResult run_training(Network& net, const std::vector<TaskData>& tasks,
                                const FreezeMask& mask, const TrainConfig& cfg,
                                const TrainHooks& hooks, const std::string& stage) {
  cfg.validate();
  mask.check_covers(net);
  std::vector<std::pair<std::string, std::size_t>> counts;
  std::map<std::string, const TaskData*> by_name;
  for (const auto& t : tasks) {
    counts.emplace_back(t.name, t.chunks.size());
    by_name[t.name] = &t;
  }
  const std::size_t per_batch = cfg.chunks_per_minibatch();
  const Rng root = Rng(cfg.seed).derive(stage);
  const auto names = net.layer_names();

  TrainResult result;
  TaskBatchPlan plan = TaskBatchPlan::build(counts, per_batch, root.derive("plan", 0));
  result.steps_per_epoch = plan.entries.size();
  const std::size_t total = planned_steps(cfg.epochs, result.steps_per_epoch);

  std::size_t epoch = 0, pos = 0;
  std::vector<Segment> segments;
  std::vector<std::uint32_t> labels;
  for (std::size_t step = 0; step < total; ++step) {
    if (pos == plan.entries.size()) {
      plan = TaskBatchPlan::build(counts, per_batch, root.derive("plan", ++epoch));
      pos = 0;
    }
    const PlanEntry& entry = plan.entries[pos++];
    if (hooks.on_minibatch) hooks.on_minibatch(entry);
    const TaskData& task = *by_name.at(entry.task);

    segments.clear();
    labels.clear();
    for (std::uint32_t idx : entry.examples) {
      const Chunk& c = task.chunks[idx];
      const Utterance& utt = task.corpus->utterances[c.utterance];
      segments.push_back({&utt.frames, c.begin, c.end});
      labels.insert(labels.end(), utt.labels.begin() + c.begin, utt.labels.begin() + c.end);
    }

    ForwardPass pass = forward_segments(net, task.name, segments);
    SoftmaxXent xent = softmax_xent(pass.logits(), labels);
    if (!std::isfinite(xent.loss))
      fail(ErrorKind::numeric, stage + ": non-finite loss at step " + std::to_string(step));

    std::vector<bool> trainable(pass.stack.size());
    for (std::size_t i = 0; i < pass.stack.size(); ++i)
      trainable[i] = !mask.frozen(pass.layer_ids[i]);
    auto stack_grads = backward_chain(pass.stack, pass.cache, xent.dlogits, trainable);

    Gradients grads(net.layer_count());
    for (std::size_t i = 0; i < stack_grads.size(); ++i)
      if (stack_grads[i]) grads[pass.layer_ids[i]] = std::move(stack_grads[i]);

    const double progress = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
    const double lr = lr_schedule(cfg, progress);
    const ClipReport report = apply_update(net, grads, lr, mask, cfg.max_change, hooks.precondition);

    result.loss_curves[task.name].push_back(xent.loss);
    const auto clipped = report.clipped_layers();
    result.clip_events += clipped.size();
    if (hooks.log) {
      TrainRecord rec{stage, step, task.name, lr, xent.loss, {}};
      for (std::size_t i : clipped) rec.clipped_layers.push_back(names[i]);
      hooks.log(rec);
    }
  }
  result.steps = total;
  return result;
}

inline TaskData make_task(const Network& net, const std::string& task, const Corpus& corpus,
                          const TrainConfig& cfg) {
  if (!net.has_head(task)) net.head_layer(task);  // throws, listing known tasks
  if (corpus.empty()) fail(ErrorKind::data, "task " + task + ": empty corpus");
  if (corpus.feature_dim != net.spec.input_dim)
    fail(ErrorKind::data, "task " + task + ": corpus feature_dim " + std::to_string(corpus.feature_dim) +
                              " does not match network input_dim " + std::to_string(net.spec.input_dim));
  corpus.validate(net.senones(task));
  return {task, &corpus, make_chunks(corpus, cfg.chunk_frames)};
}

}  // namespace detail

/// Trains the trunk and the head of `task` on one corpus.
inline TrainResult train_single_task(Network& net, const std::string& task, const Corpus& corpus,
                                     const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  std::vector<detail::TaskData> tasks{detail::make_task(net, task, corpus, cfg)};
  TrainResult r = detail::run_training(net, tasks, FreezeMask::all(net), cfg, hooks, "train_single_task");
  net.record("train_single_task task=" + task + " epochs=" + detail::format_epochs(cfg.epochs) +
             " steps=" + std::to_string(r.steps) + " seed=" + std::to_string(cfg.seed));
  return r;
}

/// Interleaved multi-task training: each minibatch belongs to one task and
/// updates the shared trunk plus that task's head only.
inline TrainResult train_multitask(Network& net, const std::map<std::string, const Corpus*>& corpora,
                                   const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  if (corpora.empty()) fail(ErrorKind::config, "train_multitask: no tasks");
  std::vector<detail::TaskData> tasks;
  std::string names;
  for (const auto& [task, corpus] : corpora) {
    if (!net.has_head(task))
      fail(ErrorKind::config, "train_multitask: task '" + task + "' has no head in the network");
    tasks.push_back(detail::make_task(net, task, *corpus, cfg));
    names += (names.empty() ? "" : ",") + task;
  }
  TrainResult r = detail::run_training(net, tasks, FreezeMask::all(net), cfg, hooks, "train_multitask");
  net.record("train_multitask tasks=" + names + " epochs=" + detail::format_epochs(cfg.epochs) +
             " steps=" + std::to_string(r.steps) + " seed=" + std::to_string(cfg.seed));
  return r;
}

/// Adapts trunk layers 1..k on `corpus` through the head of `task`, with
/// every other trunk layer and all heads frozen.
inline TrainResult adapt_shared_layers(Network& net, const std::string& task, const Corpus& corpus,
                                       std::size_t k_layers, const TrainConfig& cfg,
                                       const TrainHooks& hooks = {}) {
  if (k_layers < 1 || k_layers > net.trunk_depth())
    fail(ErrorKind::config, "adapt_shared_layers: k_layers " + std::to_string(k_layers) +
                                " outside [1, " + std::to_string(net.trunk_depth()) + "]");
  std::vector<detail::TaskData> tasks{detail::make_task(net, task, corpus, cfg)};
  TrainResult r = detail::run_training(net, tasks, FreezeMask::trunk_prefix(net, k_layers), cfg,
                                       hooks, "adapt_shared_layers");
  net.record("adapt_shared_layers task=" + task + " k_layers=" + std::to_string(k_layers) +
             " epochs=" + detail::format_epochs(cfg.epochs) + " steps=" + std::to_string(r.steps) +
             " seed=" + std::to_string(cfg.seed));
  return r;
}

}  // namespace xlac
