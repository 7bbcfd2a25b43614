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

#include <cstddef>
#include <span>

// Dense inner loops used by quantization, retrieval, clustering and the toy
// encoder. Every kernel has a scalar reference implementation; SIMD variants
// are selected once at runtime and are equivalence-tested against the scalar
// path. Set CPT_KERNELS=scalar|avx2|auto to override the selection.

namespace cpt::kern {

enum class Isa { Scalar, Avx2 };

const char* to_string(Isa isa);

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = M x, M row-major rows x cols
  void (*gemv)(const double* m, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y += M^T x
  void (*gemv_t_acc)(const double* m, std::size_t rows, std::size_t cols, const double* x,
                     double* y);
  // M += alpha * u v^T
  void (*rank1_acc)(double* m, std::size_t rows, std::size_t cols, double alpha, const double* u,
                    const double* v);
};

/// True when the variant was compiled in and the running CPU supports it.
bool isa_supported(Isa isa);

/// Table for a specific variant; throws if unsupported.
const KernelTable& table(Isa isa);

/// The table in use by the library.
const KernelTable& active();

/// Switches the library-wide table. Not thread-safe with concurrent kernel use.
void select(Isa isa);

/// Best supported variant on this machine.
Isa best_supported();

/// RAII override of the active table, restoring the previous one on exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active().isa) { select(isa); }
  ~ScopedIsa() { select(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace cpt::kern
