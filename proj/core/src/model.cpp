#include "blora/model.hpp"

#include <cmath>

#include "blora/errors.hpp"
#include "blora/ops.hpp"

namespace blora {

void ModelSpec::validate() const {
  if (d_model == 0 || heads == 0 || layers == 0 || d_ff == 0 || head_hidden == 0) {
    throw ConfigError("model sizes must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("model: " + std::to_string(heads) + " heads do not divide d_model " +
                      std::to_string(d_model));
  }
}

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng, bool requires_grad = false) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

}  // namespace

ToyClassifier::ToyClassifier(const ModelSpec& spec, const TaskSpec& task,
                             const BLoraOptions& adapter, const QuantizerConfig* qconfig)
    : spec_(spec), seq_len_(task.seq_len), classes_(task.classes) {
  spec_.validate();
  Rng frozen_rng = Rng(spec_.seed).fork(11);
  Rng init_rng(spec_.init_seed);
  Rng adapter_rng = init_rng.fork(12);
  Rng head_rng = init_rng.fork(13);
  const std::size_t d = spec_.d_model;
  token_embedding_ = gaussian({task.vocab, d}, 1.0, frozen_rng);
  position_embedding_ = gaussian({seq_len_, d}, 0.5, frozen_rng);
  attention_.reserve(spec_.layers);
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    Tensor wq = random_weight(d, d, frozen_rng);
    Tensor wk = random_weight(d, d, frozen_rng);
    Tensor wv = random_weight(d, d, frozen_rng);
    Tensor wo = random_weight(d, d, frozen_rng);
    attention_.emplace_back(std::move(wq), std::move(wk), std::move(wv), std::move(wo),
                            spec_.heads, adapter, qconfig, adapter_rng);
    // Stored pre-transposed: h[n x d] * ff_in[d x d_ff].
    ff_in_.push_back(transpose(random_weight(spec_.d_ff, d, frozen_rng)));
    ff_out_.push_back(transpose(random_weight(d, spec_.d_ff, frozen_rng)));
  }
  head_w1_ = gaussian({spec_.head_hidden, d}, 1.0 / std::sqrt(static_cast<double>(d)), head_rng,
                      true);
  head_b1_ = Tensor::zeros({spec_.head_hidden}, true);
  head_w2_ = gaussian({classes_, spec_.head_hidden},
                      1.0 / std::sqrt(static_cast<double>(spec_.head_hidden)), head_rng, true);
  head_b2_ = Tensor::zeros({classes_}, true);
}

Tensor ToyClassifier::embed(const Batch& batch) const {
  const std::size_t d = spec_.d_model;
  if (batch.tokens.size() != batch.size * seq_len_) {
    throw DimensionError("ToyClassifier: batch of " + std::to_string(batch.tokens.size()) +
                         " tokens does not match " + std::to_string(batch.size) + " x " +
                         std::to_string(seq_len_));
  }
  const std::size_t vocab = token_embedding_.dim(0);
  std::vector<double> values(batch.size * seq_len_ * d);
  const auto tok = token_embedding_.data();
  const auto pos = position_embedding_.data();
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t s = 0; s < seq_len_; ++s) {
      const int id = batch.tokens[b * seq_len_ + s];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw DomainError("token id " + std::to_string(id) + " outside vocabulary");
      }
      double* out = values.data() + (b * seq_len_ + s) * d;
      for (std::size_t j = 0; j < d; ++j) out[j] = tok[id * d + j] + pos[s * d + j];
    }
  }
  return Tensor({batch.size, seq_len_, d}, std::move(values));
}

Tensor ToyClassifier::predict(const Batch& batch, Mode mode, Rng& rng) {
  const std::size_t d = spec_.d_model;
  const std::size_t rows = batch.size * seq_len_;
  Tensor x = embed(batch);
  Tensor hidden;
  for (std::size_t l = 0; l < attention_.size(); ++l) {
    const Tensor attended = attention_[l].forward(x, mode, rng);
    const Tensor h = layer_norm(add(reshape(x, {rows, d}), reshape(attended, {rows, d})));
    const Tensor ff = matmul(relu(matmul(h, ff_in_[l])), ff_out_[l]);
    hidden = layer_norm(add(h, ff));
    x = reshape(hidden, {batch.size, seq_len_, d});
  }
  std::vector<Tensor> cls;
  cls.reserve(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) cls.push_back(slice2d(hidden, b * seq_len_, 1, 0, d));
  const Tensor pooled = concat_rows(cls);
  const Tensor h1 = tanh(add_rowwise(matmul(pooled, transpose(head_w1_)), head_b1_));
  return add_rowwise(matmul(h1, transpose(head_w2_)), head_b2_);
}

Tensor ToyClassifier::task_loss(const Batch& batch, Mode mode, Rng& rng) {
  return cross_entropy_with_logits(predict(batch, mode, rng), batch.labels);
}

std::vector<BlockRef> ToyClassifier::blocks() {
  std::vector<BlockRef> out;
  for (std::size_t l = 0; l < attention_.size(); ++l) {
    out.push_back({l, "Wq", &attention_[l].query()});
    out.push_back({l, "Wk", &attention_[l].key()});
    out.push_back({l, "Wv", &attention_[l].value()});
  }
  return out;
}

std::vector<Tensor> ToyClassifier::trainable_parameters() {
  std::vector<Tensor> params;
  for (const BlockRef& ref : blocks()) {
    for (Tensor& t : ref.block->parameters()) params.push_back(t);
  }
  for (const Tensor* t : {&head_w1_, &head_b1_, &head_w2_, &head_b2_}) params.push_back(*t);
  return params;
}

std::vector<Tensor> ToyClassifier::frozen_tensors() {
  std::vector<Tensor> frozen{token_embedding_, position_embedding_};
  for (std::size_t l = 0; l < attention_.size(); ++l) {
    frozen.push_back(attention_[l].query().w0());
    frozen.push_back(attention_[l].key().w0());
    frozen.push_back(attention_[l].value().w0());
    frozen.push_back(attention_[l].output_weight());
    frozen.push_back(ff_in_[l]);
    frozen.push_back(ff_out_[l]);
  }
  return frozen;
}

LowRankRegressor::LowRankRegressor(const ModelSpec& spec, const SyntheticTask& task,
                                   const BLoraOptions& adapter, const QuantizerConfig* qconfig) {
  Rng adapter_rng = Rng(spec.init_seed).fork(12);
  block_ = std::make_unique<BLoraLinear>(task.teacher_base().clone(), adapter, qconfig,
                                         adapter_rng);
}

Tensor LowRankRegressor::predict(const Batch& batch, Mode mode, Rng& rng) {
  return block_->forward(batch.inputs, mode, rng);
}

Tensor LowRankRegressor::task_loss(const Batch& batch, Mode mode, Rng& rng) {
  return mse(predict(batch, mode, rng), batch.targets);
}

std::vector<BlockRef> LowRankRegressor::blocks() { return {{0, "W", block_.get()}}; }

std::vector<Tensor> LowRankRegressor::trainable_parameters() { return block_->parameters(); }

std::vector<Tensor> LowRankRegressor::frozen_tensors() { return {block_->w0()}; }

std::unique_ptr<Model> make_model(const ModelSpec& spec, const SyntheticTask& task,
                                  const BLoraOptions& adapter, const QuantizerConfig* qconfig) {
  if (task.spec().kind == TaskKind::SequenceClassification) {
    return std::make_unique<ToyClassifier>(spec, task.spec(), adapter, qconfig);
  }
  return std::make_unique<LowRankRegressor>(spec, task, adapter, qconfig);
}

}  // namespace blora
