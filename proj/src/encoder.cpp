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

#include "cpt/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpt/error.hpp"
#include "cpt/kernels.hpp"
#include "cpt/rng.hpp"

namespace cpt {

bool MaskPlan::is_masked(std::size_t t) const {
  return std::binary_search(positions.begin(), positions.end(), t);
}

MaskPlan make_mask(std::size_t tokens, double ratio, std::uint64_t seed) {
  require(tokens > 0, ErrorKind::InvalidArgument, "make_mask: clip has no tokens");
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::InvalidArgument, "mask ratio must lie in (0,1)");
  // Guard against ratio*T landing a hair above an integer.
  auto count = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(tokens) - 1e-9));
  count = std::clamp<std::size_t>(count, 1, tokens);
  Rng rng(seed);
  MaskPlan plan;
  plan.tokens = tokens;
  plan.ratio = ratio;
  plan.positions = rng.sample_without_replacement(tokens, count);
  std::sort(plan.positions.begin(), plan.positions.end());
  return plan;
}

ToyNet::ToyNet(NetShape shape) : shape_(shape) {
  require(shape.input > 0 && shape.hidden > 0 && shape.output > 0, ErrorKind::InvalidArgument,
          "ToyNet dimensions must be positive");
  layout();
}

void ToyNet::layout() {
  const std::size_t d = shape_.input, h = shape_.hidden, o = shape_.output;
  off_w_in_ = 0;
  off_b_in_ = off_w_in_ + h * d;
  off_w_tok_ = off_b_in_ + h;
  off_w_ctx_ = off_w_tok_ + o * h;
  off_b_out_ = off_w_ctx_ + o * h;
  off_mask_ = off_b_out_ + o;
  params_.assign(off_mask_ + d, 0.0);
}

ToyNet ToyNet::uniform_init(NetShape shape, std::uint64_t seed, double scale) {
  ToyNet net(shape);
  Rng rng(seed);
  for (double& p : net.params_) p = rng.uniform(-scale, scale);
  return net;
}

ForwardCache ToyNet::forward(const Matrix& x, const MaskPlan* plan) const {
  require(!params_.empty(), ErrorKind::InvalidArgument, "ToyNet has no parameters");
  require(x.cols() == shape_.input, ErrorKind::DimensionMismatch,
          "ToyNet input has " + std::to_string(x.cols()) + " columns, expected " +
              std::to_string(shape_.input));
  require(x.rows() > 0, ErrorKind::InvalidArgument, "ToyNet input has no tokens");
  if (plan) {
    require(plan->tokens == x.rows(), ErrorKind::DimensionMismatch, "mask plan built for another clip length");
  }
  const std::size_t t_count = x.rows(), h = shape_.hidden, o = shape_.output;
  const auto& kt = kern::active();

  ForwardCache c;
  c.inputs = x;
  c.masked.assign(t_count, 0);
  if (plan) {
    auto mask = mask_embedding();
    for (std::size_t t : plan->positions) {
      c.masked[t] = 1;
      std::copy(mask.begin(), mask.end(), c.inputs.row(t).begin());
    }
  }
  for (std::size_t t = 0; t < t_count; ++t) {
    if (!c.masked[t]) c.context_tokens.push_back(t);
  }
  if (c.context_tokens.empty()) {
    for (std::size_t t = 0; t < t_count; ++t) c.context_tokens.push_back(t);
  }

  c.pre = Matrix(t_count, h);
  c.hidden = Matrix(t_count, h);
  auto win = w_in();
  auto bin = b_in();
  for (std::size_t t = 0; t < t_count; ++t) {
    auto pre = c.pre.row(t);
    kt.gemv(win.data, h, shape_.input, c.inputs.row(t).data(), pre.data());
    auto hid = c.hidden.row(t);
    for (std::size_t j = 0; j < h; ++j) {
      pre[j] += bin[j];
      hid[j] = std::tanh(pre[j]);
    }
  }

  c.context.assign(h, 0.0);
  for (std::size_t t : c.context_tokens) kt.axpy(1.0, c.pre.row(t).data(), c.context.data(), h);
  const double inv = 1.0 / static_cast<double>(c.context_tokens.size());
  for (double& v : c.context) v = std::tanh(v * inv);

  std::vector<double> ctx_out(o);
  kt.gemv(w_context().data, o, h, c.context.data(), ctx_out.data());
  auto bout = b_out();
  c.output = Matrix(t_count, o);
  for (std::size_t t = 0; t < t_count; ++t) {
    auto out = c.output.row(t);
    kt.gemv(w_token().data, o, h, c.hidden.row(t).data(), out.data());
    for (std::size_t j = 0; j < o; ++j) out[j] += ctx_out[j] + bout[j];
  }
  return c;
}

NetGradients ToyNet::backward(const ForwardCache& c, const Matrix& grad_output) const {
  require(c.valid(), ErrorKind::InvalidArgument, "ToyNet::backward called without a forward cache");
  require(grad_output.rows() == c.output.rows() && grad_output.cols() == shape_.output,
          ErrorKind::DimensionMismatch, "upstream gradient shape does not match the forward output");
  const std::size_t t_count = c.output.rows(), d = shape_.input, h = shape_.hidden, o = shape_.output;
  const auto& kt = kern::active();

  NetGradients g;
  g.params.assign(params_.size(), 0.0);
  g.inputs = Matrix(t_count, d);
  double* gw_in = g.params.data() + off_w_in_;
  double* gb_in = g.params.data() + off_b_in_;
  double* gw_tok = g.params.data() + off_w_tok_;
  double* gw_ctx = g.params.data() + off_w_ctx_;
  double* gb_out = g.params.data() + off_b_out_;
  double* gmask = g.params.data() + off_mask_;

  std::vector<double> sum_out(o, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) kt.axpy(1.0, grad_output.row(t).data(), sum_out.data(), o);
  for (std::size_t j = 0; j < o; ++j) gb_out[j] += sum_out[j];
  kt.rank1_acc(gw_ctx, o, h, 1.0, sum_out.data(), c.context.data());

  // Context branch: d tanh, then spread evenly over the context tokens.
  std::vector<double> dctx(h, 0.0);
  kt.gemv_t_acc(w_context().data, o, h, sum_out.data(), dctx.data());
  const double inv = 1.0 / static_cast<double>(c.context_tokens.size());
  for (std::size_t j = 0; j < h; ++j) dctx[j] *= (1.0 - c.context[j] * c.context[j]) * inv;

  Matrix dpre(t_count, h);
  for (std::size_t t : c.context_tokens) kt.axpy(1.0, dctx.data(), dpre.row(t).data(), h);

  std::vector<double> dh(h);
  for (std::size_t t = 0; t < t_count; ++t) {
    auto go = grad_output.row(t);
    auto hid = c.hidden.row(t);
    kt.rank1_acc(gw_tok, o, h, 1.0, go.data(), hid.data());
    std::fill(dh.begin(), dh.end(), 0.0);
    kt.gemv_t_acc(w_token().data, o, h, go.data(), dh.data());
    auto dp = dpre.row(t);
    for (std::size_t j = 0; j < h; ++j) dp[j] += dh[j] * (1.0 - hid[j] * hid[j]);
  }

  for (std::size_t t = 0; t < t_count; ++t) {
    auto dp = dpre.row(t);
    kt.rank1_acc(gw_in, h, d, 1.0, dp.data(), c.inputs.row(t).data());
    for (std::size_t j = 0; j < h; ++j) gb_in[j] += dp[j];
    auto dx = g.inputs.row(t);
    kt.gemv_t_acc(w_in().data, h, d, dp.data(), dx.data());
    if (c.masked[t]) {
      kt.axpy(1.0, dx.data(), gmask, d);
      std::fill(dx.begin(), dx.end(), 0.0);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

LinearHead::LinearHead(std::size_t in, std::size_t out) : in_(in), out_(out), params_(out * in + out, 0.0) {
  require(in > 0 && out > 0, ErrorKind::InvalidArgument, "LinearHead dimensions must be positive");
}

LinearHead LinearHead::uniform_init(std::size_t in, std::size_t out, std::uint64_t seed, double scale) {
  LinearHead head(in, out);
  Rng rng(seed);
  for (double& p : head.params_) p = rng.uniform(-scale, scale);
  return head;
}

Matrix LinearHead::forward(const Matrix& reps, std::span<const std::size_t> rows) const {
  require(reps.cols() == in_, ErrorKind::DimensionMismatch, "LinearHead input dimension mismatch");
  const auto& kt = kern::active();
  const double* bias = params_.data() + out_ * in_;
  Matrix logits(rows.size(), out_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto l = logits.row(i);
    kt.gemv(params_.data(), out_, in_, reps.row(rows[i]).data(), l.data());
    for (std::size_t j = 0; j < out_; ++j) l[j] += bias[j];
  }
  return logits;
}

Matrix LinearHead::backward(const Matrix& reps, std::span<const std::size_t> rows,
                            const Matrix& grad_logits, std::span<double> grad_params) const {
  require(grad_params.size() == params_.size(), ErrorKind::DimensionMismatch, "LinearHead gradient size mismatch");
  require(grad_logits.rows() == rows.size() && grad_logits.cols() == out_, ErrorKind::DimensionMismatch,
          "LinearHead upstream gradient shape mismatch");
  const auto& kt = kern::active();
  double* gbias = grad_params.data() + out_ * in_;
  Matrix grad_reps(reps.rows(), in_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto gl = grad_logits.row(i);
    kt.rank1_acc(grad_params.data(), out_, in_, 1.0, gl.data(), reps.row(rows[i]).data());
    for (std::size_t j = 0; j < out_; ++j) gbias[j] += gl[j];
    kt.gemv_t_acc(params_.data(), out_, in_, gl.data(), grad_reps.row(rows[i]).data());
  }
  return grad_reps;
}

}  // namespace cpt
