// Copyright 2026 The cpt-workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpt/codebook.hpp"
#include "cpt/matrix.hpp"

namespace cpt {

struct NetShape {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t output = 0;

  friend bool operator==(const NetShape&, const NetShape&) = default;
};

/// Positions replaced by the mask embedding for one clip.
struct MaskPlan {
  std::size_t tokens = 0;
  double ratio = 0.0;
  std::vector<std::size_t> positions;  // ascending

  bool is_masked(std::size_t t) const;
};

/// ceil(ratio * T) positions drawn uniformly without replacement.
MaskPlan make_mask(std::size_t tokens, double ratio, std::uint64_t seed);

/// Activations kept by ToyNet::forward for the backward pass.
struct ForwardCache {
  Matrix inputs;                          // after mask substitution
  Matrix pre;                             // W_in x + b_in
  Matrix hidden;                          // tanh(pre)
  std::vector<double> context;            // tanh(mean of pre over context tokens)
  std::vector<std::uint8_t> masked;
  std::vector<std::size_t> context_tokens;
  Matrix output;

  bool valid() const noexcept { return !output.empty(); }
};

struct NetGradients {
  std::vector<double> params;  // same layout as ToyNet::params()
  Matrix inputs;               // zero rows at masked positions
};

/// Token projection, tanh, and a mean-context mixer:
///   out_t = W_tok tanh(W_in x_t + b_in) + W_ctx tanh(mean_{u in U} (W_in x_u + b_in)) + b_out
/// where U is the set of unmasked tokens (all tokens when every position is
/// masked). Masked inputs are replaced by a learned mask embedding.
class ToyNet {
 public:
  ToyNet() = default;
  explicit ToyNet(NetShape shape);
  static ToyNet uniform_init(NetShape shape, std::uint64_t seed, double scale = 0.1);

  const NetShape& shape() const noexcept { return shape_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  ConstMatrixView w_in() const { return {params_.data() + off_w_in_, shape_.hidden, shape_.input}; }
  std::span<const double> b_in() const { return {params_.data() + off_b_in_, shape_.hidden}; }
  ConstMatrixView w_token() const { return {params_.data() + off_w_tok_, shape_.output, shape_.hidden}; }
  ConstMatrixView w_context() const { return {params_.data() + off_w_ctx_, shape_.output, shape_.hidden}; }
  std::span<const double> b_out() const { return {params_.data() + off_b_out_, shape_.output}; }
  std::span<const double> mask_embedding() const { return {params_.data() + off_mask_, shape_.input}; }

  ForwardCache forward(const Matrix& x, const MaskPlan* plan = nullptr) const;
  /// Reverse-mode gradients of <grad_output, forward(x)>. Throws when the
  /// cache did not come from a forward pass.
  NetGradients backward(const ForwardCache& cache, const Matrix& grad_output) const;

  friend bool operator==(const ToyNet&, const ToyNet&) = default;

 private:
  void layout();

  NetShape shape_;
  std::vector<double> params_;
  std::size_t off_w_in_ = 0, off_b_in_ = 0, off_w_tok_ = 0, off_w_ctx_ = 0, off_b_out_ = 0,
              off_mask_ = 0;
};

/// logits = W r + b, applied row-wise to representations.
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(std::size_t in, std::size_t out);
  static LinearHead uniform_init(std::size_t in, std::size_t out, std::uint64_t seed, double scale = 0.1);

  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  /// Logits for the listed rows of `reps`.
  Matrix forward(const Matrix& reps, std::span<const std::size_t> rows) const;
  /// Accumulates parameter gradients into `grad_params` and returns the
  /// gradient w.r.t. `reps` (zero for rows not listed).
  Matrix backward(const Matrix& reps, std::span<const std::size_t> rows, const Matrix& grad_logits,
                  std::span<double> grad_params) const;

  friend bool operator==(const LinearHead&, const LinearHead&) = default;

 private:
  std::size_t in_ = 0, out_ = 0;
  std::vector<double> params_;  // out x in weights, then out biases
};

/// Frozen copies of the pre-stage tokenizer encoder, model encoder and
/// codebook. There is no mutable access once constructed.
class Snapshot {
 public:
  Snapshot(ToyNet tokenizer_encoder, ToyNet model_encoder, Codebook codebook, std::uint32_t stage)
      : tokenizer_encoder_(std::move(tokenizer_encoder)),
        model_encoder_(std::move(model_encoder)),
        codebook_(std::move(codebook)),
        stage_(stage) {}

  const ToyNet& tokenizer_encoder() const noexcept { return tokenizer_encoder_; }
  const ToyNet& model_encoder() const noexcept { return model_encoder_; }
  const Codebook& codebook() const noexcept { return codebook_; }
  std::uint32_t stage() const noexcept { return stage_; }

  friend bool operator==(const Snapshot&, const Snapshot&) = default;

 private:
  ToyNet tokenizer_encoder_;
  ToyNet model_encoder_;
  Codebook codebook_;
  std::uint32_t stage_;
};

inline Snapshot take_snapshot(const ToyNet& tokenizer_encoder, const ToyNet& model_encoder,
                              const Codebook& codebook, std::uint32_t stage) {
  return Snapshot(tokenizer_encoder, model_encoder, codebook, stage);
}

}  // namespace cpt
