#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blora/adapter.hpp"
#include "blora/model.hpp"
#include "blora/optim.hpp"
#include "blora/quantizer.hpp"
#include "blora/task.hpp"

namespace blora {

struct TrainConfig {
  double lambda_q = 1.0;
  double lambda_r = 1.0;
  double lr = 5e-4;
  // Learning rate of the gate logits (xi, phi); unset means `lr`.
  std::optional<double> gate_lr;
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  AdamOptions adam;
  double warmup_ratio = 0.0;

  void validate() const;  // throws ConfigError
};

// Everything needed to reproduce one training run, minus the seed.
struct RunConfig {
  TrainConfig train;
  QuantizerConfig quantizer;
  BLoraOptions adapter;
  ModelSpec model;
  TaskSpec task;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs";

  void validate() const;
};

// Loss and its regularizer components for one batch and one set of gate draws.
struct ObjectiveTerms {
  Tensor total;
  double task = 0.0;
  double gate_regularizer = 0.0;  // sum over every quantizer of every block
  double rank_regularizer = 0.0;  // sum over every block
};

// task loss + lambda_q * sum gate regularizers + lambda_r * sum rank regularizers.
// Terms with a zero weight are left out of the graph.
ObjectiveTerms objective(Model& model, const Batch& batch, const TrainConfig& config, Rng& rng);

struct EpochSnapshot {
  std::size_t epoch = 0;
  double loss = 0.0;
  double mean_effective_rank = 0.0;
  double mean_expected_bits = 0.0;
};

struct QuantizerRecord {
  std::array<double, 4> phi{};
  double alpha = 0.0;
  double beta = 0.0;
  RangeMode range_mode = RangeMode::PerCallMinMax;
  bool enabled = true;
  int decided_bits = 32;
  double expected_bits = 32.0;
};

struct BlockRecord {
  std::size_t layer = 0;
  std::string site;
  std::size_t rank = 0;
  std::size_t effective_rank = 0;
  std::vector<double> rank_logits;
  std::array<QuantizerRecord, kNumQuantSites> quantizers;
};

struct EvalMetrics {
  std::optional<double> accuracy;
  std::optional<double> mse;
  double mean_effective_rank = 0.0;
  double mean_decided_bits = 0.0;
  std::vector<BlockRecord> blocks;
};

struct RunMetrics {
  std::optional<double> accuracy;
  std::optional<double> mse;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double mean_effective_rank = 0.0;
  double mean_expected_bits = 0.0;  // training-mode expectation after the last step
  double mean_decided_bits = 0.0;
  std::string frozen_hash_before;
  std::string frozen_hash_after;
};

struct RunReport {
  RunConfig config;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;  // one objective value per step
  std::vector<EpochSnapshot> epochs;
  std::vector<BlockRecord> blocks;
  RunMetrics metrics;
  double wall_time_s = 0.0;
};

BlockRecord snapshot_block(const BlockRef& ref);
double mean_effective_rank(Model& model);
// Average over enabled quantizers of the training-mode expected bitwidth.
double mean_expected_bits(Model& model);
double mean_decided_bits(Model& model);

// FNV-1a over the bytes of every frozen tensor.
std::string frozen_hash(Model& model);

EvalMetrics evaluate(Model& model, const SyntheticTask& task);

// Optional per-step observer: (epoch, step, objective value).
using StepObserver = std::function<void(std::size_t, std::size_t, double)>;

// Trains `model` in place. Throws NumericalError naming the step on a
// non-finite loss. Deterministic for a given seed.
RunReport train(Model& model, const SyntheticTask& task, const RunConfig& config,
                std::uint64_t seed, const StepObserver& observer = {});

// Builds task and model from `config` and trains with `seed`.
RunReport run_experiment(const RunConfig& config, std::uint64_t seed,
                         const StepObserver& observer = {});

}  // namespace blora
