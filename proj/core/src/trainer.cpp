#include "blora/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "blora/errors.hpp"
#include "blora/ops.hpp"

namespace blora {

void TrainConfig::validate() const {
  if (!(lambda_q >= 0.0) || !(lambda_r >= 0.0)) throw ConfigError("lambda_q and lambda_r must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (gate_lr && !(*gate_lr > 0.0)) throw ConfigError("gate_lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must lie in [0, 1)");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

void RunConfig::validate() const {
  train.validate();
  quantizer.validate();
  model.validate();
  task.validate();
  if (adapter.rank == 0) throw ConfigError("adapter rank must be positive");
  if (!(adapter.lora_alpha > 0.0)) throw ConfigError("lora_alpha must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (task.kind == TaskKind::LowRankRegression && adapter.rank > task.features) {
    throw ConfigError("adapter rank exceeds regression feature count");
  }
}

ObjectiveTerms objective(Model& model, const Batch& batch, const TrainConfig& config, Rng& rng) {
  ObjectiveTerms terms;
  Tensor total = model.task_loss(batch, Mode::Train, rng);
  terms.task = total.item();
  const auto blocks = model.blocks();
  if (config.lambda_q > 0.0) {
    Tensor reg = blocks.front().block->gate_regularizer();
    for (std::size_t i = 1; i < blocks.size(); ++i) reg = add(reg, blocks[i].block->gate_regularizer());
    terms.gate_regularizer = reg.item();
    total = add(total, scale(reg, config.lambda_q));
  } else {
    double reg = 0.0;
    NoGradGuard guard;
    for (const auto& ref : blocks) reg += ref.block->gate_regularizer().item();
    terms.gate_regularizer = reg;
  }
  if (config.lambda_r > 0.0) {
    Tensor reg = blocks.front().block->rank_regularizer();
    for (std::size_t i = 1; i < blocks.size(); ++i) reg = add(reg, blocks[i].block->rank_regularizer());
    terms.rank_regularizer = reg.item();
    total = add(total, scale(reg, config.lambda_r));
  } else {
    double reg = 0.0;
    NoGradGuard guard;
    for (const auto& ref : blocks) reg += ref.block->rank_regularizer().item();
    terms.rank_regularizer = reg;
  }
  terms.total = total;
  return terms;
}

BlockRecord snapshot_block(const BlockRef& ref) {
  BlockRecord record;
  const BLoraLinear& block = *ref.block;
  record.layer = ref.layer;
  record.site = ref.site;
  record.rank = block.rank();
  record.effective_rank = block.effective_rank();
  if (block.xi().defined()) {
    record.rank_logits.assign(block.xi().data().begin(), block.xi().data().end());
  }
  for (QuantSite site : kQuantSites) {
    const Quantizer& q = block.quantizer(site);
    QuantizerRecord& out = record.quantizers[static_cast<std::size_t>(site)];
    for (std::size_t i = 0; i < 4; ++i) out.phi[i] = q.state().phi.at(i);
    out.alpha = q.state().alpha;
    out.beta = q.state().beta;
    out.range_mode = q.state().range_mode;
    out.enabled = q.state().enabled;
    out.decided_bits = q.decided_bits();
    out.expected_bits = q.expected_bits(Mode::Train);
  }
  return record;
}

double mean_effective_rank(Model& model) {
  const auto blocks = model.blocks();
  double total = 0.0;
  for (const auto& ref : blocks) total += static_cast<double>(ref.block->effective_rank());
  return total / static_cast<double>(blocks.size());
}

namespace {

template <class Fn>
double mean_over_enabled_quantizers(Model& model, Fn value) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ref : model.blocks()) {
    for (QuantSite site : kQuantSites) {
      const Quantizer& q = ref.block->quantizer(site);
      if (!q.state().enabled) continue;
      total += value(q);
      ++count;
    }
  }
  return count == 0 ? 32.0 : total / static_cast<double>(count);
}

bool parameters_finite(Model& model) {
  for (const Tensor& p : model.trainable_parameters()) {
    for (double v : p.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

double mean_expected_bits(Model& model) {
  return mean_over_enabled_quantizers(model,
                                      [](const Quantizer& q) { return q.expected_bits(Mode::Train); });
}

double mean_decided_bits(Model& model) {
  return mean_over_enabled_quantizers(
      model, [](const Quantizer& q) { return static_cast<double>(q.decided_bits()); });
}

std::string frozen_hash(Model& model) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const Tensor& t : model.frozen_tensors()) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        hash ^= b;
        hash *= 0x100000001b3ULL;
      }
    }
  }
  char buffer[17];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(hash));
  return buffer;
}

EvalMetrics evaluate(Model& model, const SyntheticTask& task) {
  NoGradGuard guard;
  EvalMetrics metrics;
  Rng unused(0);
  constexpr std::size_t kChunk = 100;
  const std::size_t n = task.eval_size();
  std::size_t correct = 0;
  double squared_error = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t count = std::min(kChunk, n - begin);
    const Batch batch = task.eval_batch(begin, count);
    const Tensor out = model.predict(batch, Mode::Eval, unused);
    if (model.kind() == TaskKind::SequenceClassification) {
      const std::size_t classes = out.dim(1);
      for (std::size_t i = 0; i < count; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
          if (out.at(i, c) > out.at(i, best)) best = c;
        }
        if (static_cast<int>(best) == batch.labels[i]) ++correct;
      }
    } else {
      const auto p = out.data();
      const auto t = batch.targets.data();
      for (std::size_t i = 0; i < p.size(); ++i) squared_error += (p[i] - t[i]) * (p[i] - t[i]);
    }
  }
  if (model.kind() == TaskKind::SequenceClassification) {
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  } else {
    metrics.mse = squared_error / static_cast<double>(n * task.spec().features);
  }
  metrics.mean_effective_rank = mean_effective_rank(model);
  metrics.mean_decided_bits = mean_decided_bits(model);
  for (const BlockRef& ref : model.blocks()) metrics.blocks.push_back(snapshot_block(ref));
  return metrics;
}

RunReport train(Model& model, const SyntheticTask& task, const RunConfig& config,
                std::uint64_t seed, const StepObserver& observer) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  RunReport report;
  report.config = config;
  report.seed = seed;
  report.metrics.frozen_hash_before = frozen_hash(model);

  Rng rng = Rng(seed).fork(21);
  std::vector<Tensor> gates;
  for (const BlockRef& ref : model.blocks()) {
    for (const Tensor& t : ref.block->gate_parameters()) gates.push_back(t);
  }
  std::vector<Tensor> weights;
  for (const Tensor& t : model.trainable_parameters()) {
    const bool is_gate = std::any_of(gates.begin(), gates.end(),
                                     [&](const Tensor& g) { return g.node() == t.node(); });
    if (!is_gate) weights.push_back(t);
  }
  Adam weight_optimizer(weights, config.train.adam);
  Adam gate_optimizer(gates, config.train.adam);
  const double gate_lr = config.train.gate_lr.value_or(config.train.lr);
  const std::size_t batch_size = std::min(config.train.batch_size, task.train_size());
  const std::size_t steps_per_epoch = task.train_size() / batch_size;
  const std::size_t total_steps = steps_per_epoch * config.train.epochs;
  std::vector<std::size_t> order(task.train_size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
      const Batch batch = task.train_batch(
          std::span<const std::size_t>(order).subspan(step * batch_size, batch_size));
      Tape::current().clear();
      weight_optimizer.zero_grad();
      gate_optimizer.zero_grad();
      const ObjectiveTerms terms = objective(model, batch, config.train, rng);
      const double value = terms.total.item();
      if (!std::isfinite(value)) {
        Tape::current().clear();
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + " (global step " +
                             std::to_string(global_step) + ")");
      }
      backward(terms.total);
      weight_optimizer.step(linear_schedule(config.train.lr, global_step, total_steps,
                                            config.train.warmup_ratio));
      gate_optimizer.step(linear_schedule(gate_lr, global_step, total_steps,
                                          config.train.warmup_ratio));
      if (!parameters_finite(model)) {
        throw NumericalError("non-finite parameter after epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) + " (global step " +
                             std::to_string(global_step) + ")");
      }
      report.loss_curve.push_back(value);
      epoch_loss += value;
      if (observer) observer(epoch, step, value);
    }
    EpochSnapshot snap;
    snap.epoch = epoch;
    snap.loss = steps_per_epoch ? epoch_loss / static_cast<double>(steps_per_epoch) : 0.0;
    snap.mean_effective_rank = mean_effective_rank(model);
    snap.mean_expected_bits = mean_expected_bits(model);
    report.epochs.push_back(snap);
  }

  const EvalMetrics eval = evaluate(model, task);
  report.blocks = eval.blocks;
  RunMetrics& m = report.metrics;
  m.accuracy = eval.accuracy;
  m.mse = eval.mse;
  if (!report.loss_curve.empty()) {
    m.initial_loss = report.loss_curve.front();
    m.final_loss = report.loss_curve.back();
  }
  m.mean_effective_rank = eval.mean_effective_rank;
  m.mean_expected_bits = mean_expected_bits(model);
  m.mean_decided_bits = eval.mean_decided_bits;
  m.frozen_hash_after = frozen_hash(model);
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

RunReport run_experiment(const RunConfig& config, std::uint64_t seed,
                         const StepObserver& observer) {
  config.validate();
  const SyntheticTask task(config.task);
  ModelSpec spec = config.model;
  spec.init_seed = seed;
  const QuantizerConfig qconfig = config.quantizer;
  BLoraOptions adapter = config.adapter;
  auto model = make_model(spec, task, adapter, &qconfig);
  return train(*model, task, config, seed, observer);
}

}  // namespace blora
