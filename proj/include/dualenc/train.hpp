#pragma once

// Mini-batch momentum SGD over in-batch losses, with early stopping on
// in-batch precision@1. Multi-task training shares the embedding table and
// keeps one affine scale per task.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dualenc/common.hpp"
#include "dualenc/encoder.hpp"
#include "dualenc/loss.hpp"
#include "dualenc/text.hpp"

namespace dualenc {

struct TrainingPair {
  TokenSequence left;
  TokenSequence right;
  int label = 1;
};

struct ScaleVelocity {
  double alpha = 0.0;
  double beta = 0.0;
};

struct OptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  Matrix table_velocity;                      // V x d, allocated on first step
  std::vector<ScaleVelocity> scale_velocity;  // one per scale
  std::size_t steps = 0;

  OptimizerState() = default;
  OptimizerState(double lr, double mu) : learning_rate(lr), momentum(mu) {
    if (!(lr > 0.0)) throw Error("learning rate must be positive");
    if (!(mu >= 0.0 && mu < 1.0)) throw Error("momentum coefficient must be in [0, 1)");
  }
};

struct TaskSpec {
  std::string name;
  std::vector<TrainingPair> training_pairs;
  std::vector<TrainingPair> tuning_pairs;  // held-out positives
  AffineScale scale;
  LossKind loss_kind = LossKind::kSoftmax;
  TripletConfig triplet;
  double weight = 1.0;
};

struct TrainConfig {
  std::size_t batch_size = 1000;
  std::size_t max_steps = 10000;
  std::size_t eval_every = 200;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  double learning_rate = 0.01;
  double momentum = 0.9;

  void validate() const {
    if (batch_size < 2) throw Error("batch_size must be at least 2 for in-batch losses");
    if (patience < 1) throw Error("patience must be at least 1");
    if (eval_every < 1) throw Error("eval_every must be at least 1");
    if (max_steps < 1) throw Error("max_steps must be at least 1");
  }
};

struct LogRecord {
  std::size_t step = 0;
  std::string task;
  double loss = 0.0;
  double tuning_p1 = 0.0;
  std::int64_t wallclock_ms = 0;
};

struct TrainResult {
  EmbeddingTable table;
  std::vector<std::string> task_names;
  std::vector<AffineScale> scales;  // parallel to task_names
  std::vector<LogRecord> log;
  double best_tuning_p1 = -1.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool stopped_early = false;
};

/// One epoch of shuffled index batches. A trailing batch smaller than 2 is
/// dropped because in-batch losses need at least one negative.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t num_pairs,
                                                          std::size_t batch_size,
                                                          std::mt19937_64& rng) {
  if (num_pairs == 0) throw Error("make_batches: no training pairs");
  if (batch_size < 1) throw Error("make_batches: batch_size must be at least 1");
  std::vector<std::size_t> order(num_pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_pairs; start += batch_size) {
    const std::size_t end = std::min(num_pairs, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t num_pairs,
                                                          std::size_t batch_size,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_batches(num_pairs, batch_size, rng);
}

namespace detail {

inline void require_finite(const ParameterGradients& g, std::size_t step) {
  if (!std::isfinite(g.d_alpha) || !std::isfinite(g.d_beta))
    throw DivergenceError("non-finite scale gradient", step);
  for (const auto& [id, row] : g.d_weights)
    if (!all_finite(row))
      throw DivergenceError("non-finite gradient for embedding row " + std::to_string(id), step);
}

}  // namespace detail

/// v <- mu * v + g; theta <- theta - lr * v for the shared table rows present
/// in any gradient and for each scale. grads[t] carries the (already weighted)
/// gradient of task t; its d_alpha/d_beta update scales[t]. Rows absent from
/// every gradient keep both their weights and their velocity.
inline void momentum_step(EmbeddingTable& table, std::span<AffineScale> scales,
                          std::span<const ParameterGradients> grads, OptimizerState& state) {
  if (grads.size() != scales.size())
    throw Error("momentum_step: " + std::to_string(grads.size()) + " gradients for " +
                std::to_string(scales.size()) + " scales");
  ++state.steps;
  for (const auto& g : grads) detail::require_finite(g, state.steps);

  const std::size_t d = table.dimension();
  if (state.table_velocity.rows() != table.vocab_size() || state.table_velocity.cols() != d)
    state.table_velocity = Matrix(table.vocab_size(), d);
  if (state.scale_velocity.size() != scales.size()) state.scale_velocity.resize(scales.size());

  // Sum the shared-table gradient across tasks, row by row.
  std::map<TokenId, Vector> combined;
  for (const auto& g : grads)
    for (const auto& [id, row] : g.d_weights) {
      if (id >= table.vocab_size()) throw Error("momentum_step: gradient row out of range");
      if (row.size() != d) throw Error("momentum_step: gradient row has wrong dimension");
      auto [it, inserted] = combined.try_emplace(id, d, 0.0);
      for (std::size_t k = 0; k < d; ++k) it->second[k] += row[k];
    }
  for (const auto& [id, g] : combined) {
    auto v = state.table_velocity.row(id);
    auto w = table.row(id);
    for (std::size_t k = 0; k < d; ++k) {
      v[k] = state.momentum * v[k] + g[k];
      w[k] -= state.learning_rate * v[k];
    }
  }
  for (std::size_t t = 0; t < scales.size(); ++t) {
    auto& v = state.scale_velocity[t];
    v.alpha = state.momentum * v.alpha + grads[t].d_alpha;
    v.beta = state.momentum * v.beta + grads[t].d_beta;
    scales[t].alpha -= state.learning_rate * v.alpha;
    scales[t].beta -= state.learning_rate * v.beta;
  }
}

inline void momentum_step(EmbeddingTable& table, AffineScale& scale,
                          const ParameterGradients& grads, OptimizerState& state) {
  momentum_step(table, std::span<AffineScale>(&scale, 1),
                std::span<const ParameterGradients>(&grads, 1), state);
}

/// Weighted average sum(w_i * L_i) / sum(w_i).
inline double multi_task_loss(std::span<const double> losses, std::span<const double> weights) {
  if (losses.size() != weights.size())
    throw Error("multi_task_loss: " + std::to_string(losses.size()) + " losses vs " +
                std::to_string(weights.size()) + " weights");
  if (losses.empty()) throw Error("multi_task_loss: no tasks");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(weights[i] > 0.0)) throw Error("multi_task_loss: weights must be positive");
    num += weights[i] * losses[i];
    den += weights[i];
  }
  return num / den;
}

struct BatchResult {
  double loss = 0.0;
  ParameterGradients grads;
};

/// Forward and backward pass of one task's loss on the given batch.
inline BatchResult compute_batch(const TaskSpec& task, const EmbeddingTable& table,
                                 const AffineScale& scale,
                                 std::span<const std::size_t> batch) {
  std::vector<TokenSequence> left, right;
  std::vector<int> labels;
  left.reserve(batch.size());
  right.reserve(batch.size());
  labels.reserve(batch.size());
  for (std::size_t idx : batch) {
    const auto& p = task.training_pairs.at(idx);
    left.push_back(p.left);
    right.push_back(p.right);
    labels.push_back(p.label);
  }
  std::vector<Vector> lq, rq;
  lq.reserve(batch.size());
  rq.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    lq.push_back(encode_average(table, left[i]));
    rq.push_back(encode_average(table, right[i]));
  }
  const auto m = similarity_matrix(lq, rq, scale);
  auto loss = compute_loss(task.loss_kind, m, task.triplet, labels);
  return {loss.value, encoder_backward(left, right, table, scale, loss.dl_dm, loss.target)};
}

/// In-batch precision@1 pooled over consecutive tuning batches of
/// `batch_size` positive pairs (a trailing batch of one pair is skipped).
inline double tuning_precision_at_1(const std::vector<TrainingPair>& pairs,
                                    const EmbeddingTable& table, const AffineScale& scale,
                                    std::size_t batch_size) {
  std::vector<const TrainingPair*> positives;
  for (const auto& p : pairs)
    if (p.label != 0) positives.push_back(&p);
  if (positives.size() < 2) throw Error("tuning set needs at least 2 positive pairs");
  double hits = 0.0;
  std::size_t rows = 0;
  for (std::size_t start = 0; start < positives.size(); start += batch_size) {
    const std::size_t end = std::min(positives.size(), start + batch_size);
    if (end - start < 2) break;
    std::vector<Vector> lq, rq;
    for (std::size_t i = start; i < end; ++i) {
      lq.push_back(encode_average(table, positives[i]->left));
      rq.push_back(encode_average(table, positives[i]->right));
    }
    const auto m = similarity_matrix(lq, rq, scale);
    hits += in_batch_precision_at_1(m) * static_cast<double>(end - start);
    rows += end - start;
  }
  return hits / static_cast<double>(rows);
}

namespace detail {

// Endless stream of shuffled batches over one task's training pairs.
class BatchStream {
 public:
  BatchStream(std::size_t num_pairs, std::size_t batch_size, std::uint64_t seed)
      : num_pairs_(num_pairs), batch_size_(batch_size), rng_(seed) {
    if (num_pairs < 2) throw Error("a task needs at least 2 training pairs");
  }

  const std::vector<std::size_t>& next() {
    if (pos_ >= epoch_.size()) {
      epoch_ = make_batches(num_pairs_, batch_size_, rng_);
      pos_ = 0;
    }
    return epoch_[pos_++];
  }

 private:
  std::size_t num_pairs_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> epoch_;
  std::size_t pos_ = 0;
};

inline std::uint64_t task_seed(std::uint64_t seed, std::size_t task_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task_index)};
  std::uint32_t parts[2];
  seq.generate(parts, parts + 2);
  return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

// Shared loop: every step draws one batch from every task, averages the
// per-task losses with the task weights and applies one momentum update.
inline TrainResult run_training(std::vector<TaskSpec>& tasks, EmbeddingTable table,
                                const TrainConfig& config,
                                const std::function<void(const LogRecord&)>& on_log) {
  config.validate();
  if (tasks.empty()) throw Error("no training tasks");
  const auto start = std::chrono::steady_clock::now();

  std::vector<BatchStream> streams;
  std::vector<AffineScale> scales;
  std::vector<double> weights;
  double weight_total = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (!(tasks[t].weight > 0.0)) throw Error("task '" + tasks[t].name + "' has non-positive weight");
    streams.emplace_back(tasks[t].training_pairs.size(), config.batch_size,
                         task_seed(config.seed, t));
    scales.push_back(tasks[t].scale);
    weights.push_back(tasks[t].weight);
    weight_total += tasks[t].weight;
  }

  OptimizerState state(config.learning_rate, config.momentum);
  TrainResult result;
  for (const auto& t : tasks) result.task_names.push_back(t.name);
  result.table = table;
  result.scales = scales;

  std::vector<double> loss_sum(tasks.size(), 0.0);
  std::size_t loss_steps = 0;
  std::size_t bad_evals = 0;
  std::vector<ParameterGradients> grads(tasks.size());

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      auto r = compute_batch(tasks[t], table, scales[t], streams[t].next());
      if (!std::isfinite(r.loss)) throw DivergenceError("non-finite loss", step);
      loss_sum[t] += r.loss;
      r.grads.scale_by(weights[t] / weight_total);
      grads[t] = std::move(r.grads);
    }
    momentum_step(table, scales, grads, state);
    ++loss_steps;
    result.steps_run = step;

    if (step % config.eval_every != 0 && step != config.max_steps) continue;
    double metric = 0.0;
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const double p1 =
          tuning_precision_at_1(tasks[t].tuning_pairs, table, scales[t], config.batch_size);
      metric += p1 / static_cast<double>(tasks.size());
      LogRecord rec{step, tasks[t].name, loss_sum[t] / static_cast<double>(loss_steps), p1, now};
      result.log.push_back(rec);
      if (on_log) on_log(rec);
      loss_sum[t] = 0.0;
    }
    loss_steps = 0;
    if (metric > result.best_tuning_p1) {
      result.best_tuning_p1 = metric;
      result.best_step = step;
      result.table = table;
      result.scales = scales;
      bad_evals = 0;
    } else if (++bad_evals >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace detail

/// Trains one task until early stopping or max_steps; returns the snapshot
/// with the best tuning precision@1.
inline TrainResult train_single_task(const TaskSpec& task, const EmbeddingTable& table,
                                     const TrainConfig& config,
                                     const std::function<void(const LogRecord&)>& on_log = {}) {
  std::vector<TaskSpec> tasks{task};
  return detail::run_training(tasks, table, config, on_log);
}

/// Multi-task training over a shared table. With `pretrain_task`, that task is
/// first trained alone to convergence; its best snapshot (table and scale)
/// seeds the joint stage, which starts with fresh optimizer state.
inline TrainResult train_multi_task(std::vector<TaskSpec> tasks, const EmbeddingTable& table,
                                    const TrainConfig& config,
                                    const std::optional<std::string>& pretrain_task = std::nullopt,
                                    const std::function<void(const LogRecord&)>& on_log = {}) {
  EmbeddingTable start = table;
  std::vector<LogRecord> pre_log;
  if (pretrain_task) {
    auto it = std::find_if(tasks.begin(), tasks.end(),
                           [&](const TaskSpec& t) { return t.name == *pretrain_task; });
    if (it == tasks.end()) throw Error("unknown pretrain task '" + *pretrain_task + "'");
    auto pre = train_single_task(*it, table, config, on_log);
    start = std::move(pre.table);
    it->scale = pre.scales.front();
    pre_log = std::move(pre.log);
  }
  auto result = detail::run_training(tasks, std::move(start), config, on_log);
  if (!pre_log.empty()) result.log.insert(result.log.begin(), pre_log.begin(), pre_log.end());
  return result;
}

/// Seeded split holding out `fraction` of the pairs (at least 2, when
/// possible) for tuning. Returns {train, tuning}.
inline std::pair<std::vector<TrainingPair>, std::vector<TrainingPair>> split_tuning(
    std::vector<TrainingPair> pairs, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  std::size_t n_tune = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pairs.size())));
  n_tune = std::max<std::size_t>(n_tune, 2);
  if (n_tune + 2 > pairs.size()) throw Error("too few pairs to hold out a tuning set");
  std::vector<TrainingPair> tune(pairs.end() - static_cast<std::ptrdiff_t>(n_tune), pairs.end());
  pairs.resize(pairs.size() - n_tune);
  return {std::move(pairs), std::move(tune)};
}

// Log: header line then "step,task,loss,tuning_p1,wallclock_ms" records.
inline void write_log_header(std::ostream& os) { os << "step,task,loss,tuning_p1,wallclock_ms\n"; }

inline void write_log_record(std::ostream& os, const LogRecord& r) {
  os << r.step << ',' << r.task << ',' << format_double(r.loss) << ','
     << format_double(r.tuning_p1) << ',' << r.wallclock_ms << '\n';
}

// Scales sidecar: one "task alpha beta" line per task.
inline void write_scales(std::ostream& os, const std::vector<std::string>& names,
                         const std::vector<AffineScale>& scales) {
  for (std::size_t i = 0; i < names.size(); ++i)
    os << names[i] << ' ' << format_double(scales[i].alpha) << ' '
       << format_double(scales[i].beta) << '\n';
}

inline std::vector<std::pair<std::string, AffineScale>> read_scales(std::istream& is) {
  std::vector<std::pair<std::string, AffineScale>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream f(line);
    std::string name, a, b;
    if (!(f >> name)) continue;
    if (!(f >> a >> b)) throw ParseError("expected 'task alpha beta'", lineno);
    out.emplace_back(name, AffineScale{parse_double(a, lineno), parse_double(b, lineno)});
  }
  return out;
}

struct Checkpoint {
  Vocabulary vocab;
  EmbeddingTable table;
  std::vector<std::pair<std::string, AffineScale>> scales;
};

inline void save_checkpoint(const std::filesystem::path& dir, const Vocabulary& vocab,
                            const TrainResult& result) {
  std::filesystem::create_directories(dir);
  save_vocabulary((dir / "vocab.tsv").string(), vocab);
  save_embeddings((dir / "embeddings.txt").string(), vocabulary_tokens(vocab), result.table);
  std::ofstream os(dir / "scales.txt");
  if (!os) throw Error("cannot write " + (dir / "scales.txt").string());
  write_scales(os, result.task_names, result.scales);
}

/// Loads a checkpoint and checks that the table rows line up with the vocabulary.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint c;
  c.vocab = load_vocabulary((dir / "vocab.tsv").string());
  auto emb = load_embeddings((dir / "embeddings.txt").string());
  if (emb.tokens.size() != c.vocab.size())
    throw Error("checkpoint mismatch: " + std::to_string(emb.tokens.size()) +
                " embedding rows for a vocabulary of " + std::to_string(c.vocab.size()));
  for (std::size_t i = 0; i < emb.tokens.size(); ++i)
    if (emb.tokens[i] != c.vocab.token(static_cast<TokenId>(i)))
      throw Error("checkpoint mismatch: embedding row " + std::to_string(i) + " is '" +
                  emb.tokens[i] + "' but vocabulary has '" +
                  c.vocab.token(static_cast<TokenId>(i)) + "'");
  c.table = std::move(emb.table);
  std::ifstream is(dir / "scales.txt");
  if (is) c.scales = read_scales(is);
  return c;
}

}  // namespace dualenc
