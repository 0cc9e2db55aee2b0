#include "blora/task.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "blora/adapter.hpp"
#include "blora/errors.hpp"

namespace blora {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::SequenceClassification ? "sequence-classification"
                                                  : "low-rank-regression";
}

TaskKind task_kind_from_string(std::string_view text) {
  if (text == "sequence-classification") return TaskKind::SequenceClassification;
  if (text == "low-rank-regression") return TaskKind::LowRankRegression;
  throw ConfigError("unknown task kind '" + std::string(text) + "'");
}

void TaskSpec::validate() const {
  if (train_size == 0 || eval_size == 0) throw ConfigError("task splits must be non-empty");
  if (kind == TaskKind::SequenceClassification) {
    if (vocab < 4) throw ConfigError("task vocab must hold the reserved tokens plus two more");
    if (seq_len < 2) throw ConfigError("task seq_len must be at least 2");
    if (classes != 2) throw ConfigError("the presence task has exactly 2 classes");
  } else {
    if (features == 0) throw ConfigError("task features must be positive");
    if (teacher_rank == 0 || teacher_rank > features) {
      throw ConfigError("teacher_rank must lie in [1, features]");
    }
  }
}

SyntheticTask::SyntheticTask(const TaskSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng root(spec_.seed);
  Rng teacher_rng = root.fork(1);
  Rng train_rng = root.fork(2);
  Rng eval_rng = root.fork(3);
  if (spec_.kind == TaskKind::LowRankRegression) {
    const std::size_t n = spec_.features;
    teacher_base_ = random_weight(n, n, teacher_rng);
    std::vector<double> u(n * spec_.teacher_rank);
    std::vector<double> v(n * spec_.teacher_rank);
    const double sd = std::sqrt(spec_.teacher_scale / static_cast<double>(n));
    for (double& x : u) x = teacher_rng.normal(0.0, std::sqrt(spec_.teacher_scale));
    for (double& x : v) x = teacher_rng.normal(0.0, sd);
    std::vector<double> full(teacher_base_.data().begin(), teacher_base_.data().end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < spec_.teacher_rank; ++k)
          full[i * n + j] += u[i * spec_.teacher_rank + k] * v[j * spec_.teacher_rank + k];
    teacher_full_ = Tensor({n, n}, std::move(full));
  }
  fill(train_, spec_.train_size, train_rng);
  fill(eval_, spec_.eval_size, eval_rng);
}

void SyntheticTask::fill(Split& split, std::size_t count, Rng rng) const {
  if (spec_.kind == TaskKind::SequenceClassification) {
    const std::size_t seq = spec_.seq_len;
    const std::size_t ordinary = spec_.vocab - 2;
    split.tokens.resize(count * seq);
    split.labels.resize(count);
    for (std::size_t s = 0; s < count; ++s) {
      int* row = split.tokens.data() + s * seq;
      row[0] = kClsToken;
      for (std::size_t p = 1; p < seq; ++p) row[p] = 2 + static_cast<int>(rng.below(ordinary));
      const int label = static_cast<int>(rng.below(2));
      if (label == 1) row[1 + rng.below(seq - 1)] = kMarkerToken;
      split.labels[s] = label;
    }
    return;
  }
  const std::size_t n = spec_.features;
  split.inputs.resize(count * n);
  split.targets.resize(count * n);
  const auto w = teacher_full_.data();
  for (std::size_t s = 0; s < count; ++s) {
    double* x = split.inputs.data() + s * n;
    for (std::size_t j = 0; j < n; ++j) x[j] = rng.normal();
    double* y = split.targets.data() + s * n;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * x[j];
      y[i] = acc + rng.normal(0.0, spec_.noise);
    }
  }
}

Batch SyntheticTask::gather(const Split& split, std::span<const std::size_t> indices) const {
  Batch batch;
  batch.size = indices.size();
  if (spec_.kind == TaskKind::SequenceClassification) {
    const std::size_t seq = spec_.seq_len;
    batch.tokens.reserve(indices.size() * seq);
    for (std::size_t idx : indices) {
      batch.tokens.insert(batch.tokens.end(), split.tokens.begin() + idx * seq,
                          split.tokens.begin() + (idx + 1) * seq);
      batch.labels.push_back(split.labels[idx]);
    }
    return batch;
  }
  const std::size_t n = spec_.features;
  std::vector<double> x;
  std::vector<double> y;
  x.reserve(indices.size() * n);
  y.reserve(indices.size() * n);
  for (std::size_t idx : indices) {
    x.insert(x.end(), split.inputs.begin() + idx * n, split.inputs.begin() + (idx + 1) * n);
    y.insert(y.end(), split.targets.begin() + idx * n, split.targets.begin() + (idx + 1) * n);
  }
  batch.inputs = Tensor({indices.size(), n}, std::move(x));
  batch.targets = Tensor({indices.size(), n}, std::move(y));
  return batch;
}

Batch SyntheticTask::train_batch(std::span<const std::size_t> indices) const {
  for (std::size_t idx : indices) {
    if (idx >= spec_.train_size) throw ShapeError("train index out of range");
  }
  return gather(train_, indices);
}

Batch SyntheticTask::eval_batch(std::size_t begin, std::size_t count) const {
  if (begin + count > spec_.eval_size) throw ShapeError("eval range out of bounds");
  std::vector<std::size_t> indices(count);
  std::iota(indices.begin(), indices.end(), begin);
  return gather(eval_, indices);
}

}  // namespace blora
