#pragma once

#include <memory>
#include <string>
#include <vector>

#include "blora/adapter.hpp"
#include "blora/quantizer.hpp"
#include "blora/task.hpp"

namespace blora {

struct ModelSpec {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_ff = 64;
  std::size_t head_hidden = 32;
  std::uint64_t seed = 0;       // frozen ("pre-trained") weights
  std::uint64_t init_seed = 0;  // adapter and head initialization

  void validate() const;  // throws ConfigError
};

// A B-LoRA block together with where it sits in the host model.
struct BlockRef {
  std::size_t layer;
  std::string site;  // "Wq", "Wk", "Wv" or "W" for the regression host
  BLoraLinear* block;
};

class Model {
 public:
  virtual ~Model() = default;

  // Logits [batch x classes] or predictions [batch x features].
  virtual Tensor predict(const Batch& batch, Mode mode, Rng& rng) = 0;
  // Mean cross-entropy (classification) or mean squared error (regression).
  virtual Tensor task_loss(const Batch& batch, Mode mode, Rng& rng) = 0;

  virtual std::vector<BlockRef> blocks() = 0;
  virtual std::vector<Tensor> trainable_parameters() = 0;
  // Every tensor that must never change during training.
  virtual std::vector<Tensor> frozen_tensors() = 0;
  virtual TaskKind kind() const = 0;
};

// Token + positional embeddings, attention layers whose Wq/Wk/Wv carry
// B-LoRA blocks, frozen feed-forwards with residual connections and layer
// normalization, and a two-layer head reading the CLS position.
class ToyClassifier final : public Model {
 public:
  ToyClassifier(const ModelSpec& spec, const TaskSpec& task, const BLoraOptions& adapter,
                const QuantizerConfig* qconfig);

  Tensor predict(const Batch& batch, Mode mode, Rng& rng) override;
  Tensor task_loss(const Batch& batch, Mode mode, Rng& rng) override;
  std::vector<BlockRef> blocks() override;
  std::vector<Tensor> trainable_parameters() override;
  std::vector<Tensor> frozen_tensors() override;
  TaskKind kind() const override { return TaskKind::SequenceClassification; }

  std::vector<AttentionLayer>& attention_layers() { return attention_; }

 private:
  Tensor embed(const Batch& batch) const;

  ModelSpec spec_;
  std::size_t seq_len_;
  std::size_t classes_;
  Tensor token_embedding_;  // [vocab x d]
  Tensor position_embedding_;  // [seq x d]
  std::vector<AttentionLayer> attention_;
  std::vector<Tensor> ff_in_;   // [d_ff x d]
  std::vector<Tensor> ff_out_;  // [d x d_ff]
  Tensor head_w1_, head_b1_, head_w2_, head_b2_;
};

// One B-LoRA block fitted to a teacher that shares its frozen base matrix.
class LowRankRegressor final : public Model {
 public:
  LowRankRegressor(const ModelSpec& spec, const SyntheticTask& task, const BLoraOptions& adapter,
                   const QuantizerConfig* qconfig);

  Tensor predict(const Batch& batch, Mode mode, Rng& rng) override;
  Tensor task_loss(const Batch& batch, Mode mode, Rng& rng) override;
  std::vector<BlockRef> blocks() override;
  std::vector<Tensor> trainable_parameters() override;
  std::vector<Tensor> frozen_tensors() override;
  TaskKind kind() const override { return TaskKind::LowRankRegression; }

 private:
  std::unique_ptr<BLoraLinear> block_;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec, const SyntheticTask& task,
                                  const BLoraOptions& adapter, const QuantizerConfig* qconfig);

}  // namespace blora
