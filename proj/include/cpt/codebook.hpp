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

#include "cpt/matrix.hpp"

namespace cpt {

/// Vectors with norm below this are rejected by l2_normalize.
inline constexpr double kMinNorm = 1e-12;

/// x / |x|; throws DegenerateVector when |x| < kMinNorm.
std::vector<double> l2_normalize(std::span<const double> x);

/// Writes x / |x| into out and returns |x|.
double l2_normalize_into(std::span<const double> x, std::span<double> out);

/// Pulls a gradient taken w.r.t. u = x/|x| back to x:
///   dx = (g - u (u . g)) / |x|
void normalize_backward(std::span<const double> unit, double norm, std::span<const double> grad_unit,
                        std::span<double> grad_x);

/// The dynamic vocabulary: K code vectors and their EMA usage.
struct Codebook {
  Matrix codes;               // K x D
  std::vector<double> usage;  // K, each in [0, 1]

  std::size_t size() const noexcept { return codes.rows(); }
  std::size_t dim() const noexcept { return codes.cols(); }

  static Codebook uniform_init(std::size_t k, std::size_t d, std::uint64_t seed, double scale = 0.1);
  void validate() const;

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

struct QuantizeResult {
  std::vector<std::uint32_t> indices;               // per token
  Matrix normed_features;                           // l2(e_t)
  Matrix normed_codes;                              // l2(v_{z_t})
  std::vector<double> feature_norms;                // |e_t|
  std::vector<double> code_norms;                   // |v_{z_t}|
  std::vector<std::uint64_t> assignment_counts;     // n_k
  std::uint64_t token_total = 0;

  std::size_t code_count() const noexcept { return assignment_counts.size(); }
};

/// Assigns every row of `features` to the code of highest cosine similarity
/// (lowest index on ties).
QuantizeResult quantize(const Matrix& features, const Codebook& cb);

/// Same bookkeeping with the assignment given instead of searched. Used to
/// evaluate losses under a frozen assignment.
QuantizeResult quantize_with_indices(const Matrix& features, const Codebook& cb,
                                     std::span<const std::uint32_t> indices);

struct VqLoss {
  double value = 0.0;
  Matrix grad_features;  // N x D, commitment path only
  Matrix grad_codes;     // K x D, codebook path only
};

/// sum_t |l2(e_t) - sg[l2(v)]|^2 + |sg[l2(e_t)] - l2(v)|^2 with the two
/// straight-through gradient paths kept separate.
VqLoss vq_loss(const QuantizeResult& q);

/// N_k <- gamma N_k + (1 - gamma) n_k / token_total.
void update_usage(Codebook& cb, const QuantizeResult& q, double gamma);

/// alpha = exp(-N K 10 / (1 - gamma)), clamped to [0, 1].
double reinit_factor(double usage, std::size_t code_count, double gamma);

struct ReinitReport {
  std::vector<double> alphas;
  std::vector<std::uint32_t> anchors;  // token used as centroid for unassigned codes, else UINT32_MAX
};

/// v_k <- (1 - alpha_k) v_k + alpha_k c_k, where c_k is the mean of the
/// normalized features assigned to k, or the most similar normalized feature
/// when nothing was assigned.
ReinitReport reinit_codes(Codebook& cb, const QuantizeResult& q, double gamma);

struct ContrastiveLoss {
  double value = 0.0;
  Matrix grad_features;  // N x D, w.r.t. raw e
  Matrix grad_codes;     // K x D, w.r.t. raw v
  std::size_t contributing_tokens = 0;
};

/// Mean over tokens of the InfoNCE term for (v_{z_t}, e_t) against at most
/// `max_negatives` batch features assigned to other codes. Negative subsets are
/// drawn from a generator seeded with `seed`.
ContrastiveLoss contrastive_loss(const Codebook& cb, const QuantizeResult& q, double tau,
                                 std::size_t max_negatives, std::uint64_t seed);

inline double codebook_total_loss(double l_tok, double l_contra, double lambda_contra) {
  return l_tok + lambda_contra * l_contra;
}

}  // namespace cpt
