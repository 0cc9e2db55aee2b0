#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "blora/rng.hpp"
#include "blora/tensor.hpp"

namespace blora {

enum class TaskKind { SequenceClassification, LowRankRegression };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view text);

struct TaskSpec {
  TaskKind kind = TaskKind::SequenceClassification;
  std::size_t vocab = 64;
  std::size_t seq_len = 16;
  std::size_t classes = 2;
  std::size_t train_size = 1024;
  std::size_t eval_size = 1000;
  std::uint64_t seed = 0;
  // Regression only.
  std::size_t features = 32;
  std::size_t teacher_rank = 2;
  double teacher_scale = 1.0;
  double noise = 0.01;

  void validate() const;  // throws ConfigError
};

// Reserved tokens of the classification task.
inline constexpr int kClsToken = 0;
inline constexpr int kMarkerToken = 1;

struct Batch {
  std::size_t size = 0;
  std::vector<int> tokens;  // [size x seq_len], classification
  std::vector<int> labels;  // classification
  Tensor inputs;            // [size x features], regression
  Tensor targets;           // [size x features], regression
};

// Fixed train/eval splits drawn from disjoint generator streams.
//
// Classification: position 0 holds the CLS token, the remaining positions
// are drawn from the non-reserved vocabulary, and the label is 1 exactly when
// the marker token appears somewhere in the sequence. Labels are balanced
// draws, so the model must move information from the marker's position into
// the CLS position through attention.
//
// Regression: y = (W0 + U V^T) x + noise with a frozen random W0 and a planted
// rank-k update U V^T.
class SyntheticTask {
 public:
  explicit SyntheticTask(const TaskSpec& spec);

  const TaskSpec& spec() const { return spec_; }
  std::size_t train_size() const { return spec_.train_size; }
  std::size_t eval_size() const { return spec_.eval_size; }

  Batch train_batch(std::span<const std::size_t> indices) const;
  Batch eval_batch(std::size_t begin, std::size_t count) const;

  // Regression teacher: frozen base and the full teacher matrix W0 + U V^T.
  const Tensor& teacher_base() const { return teacher_base_; }
  const Tensor& teacher_full() const { return teacher_full_; }

 private:
  struct Split {
    std::vector<int> tokens;
    std::vector<int> labels;
    std::vector<double> inputs;
    std::vector<double> targets;
  };
  void fill(Split& split, std::size_t count, Rng rng) const;
  Batch gather(const Split& split, std::span<const std::size_t> indices) const;

  TaskSpec spec_;
  Tensor teacher_base_;
  Tensor teacher_full_;
  Split train_;
  Split eval_;
};

}  // namespace blora
