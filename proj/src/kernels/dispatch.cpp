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

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "cpt/error.hpp"
#include "kernels/kernels_impl.hpp"

namespace cpt::kern {

namespace {

const KernelTable* initial_table() {
  Isa isa = best_supported();
  if (const char* env = std::getenv("CPT_KERNELS")) {
    std::string_view v(env);
    if (v == "scalar") {
      isa = Isa::Scalar;
    } else if (v == "avx2" && isa_supported(Isa::Avx2)) {
      isa = Isa::Avx2;
    }
  }
  return &table(isa);
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{initial_table()};
  return ptr;
}

}  // namespace

const char* to_string(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2: return detail::avx2_table() != nullptr && detail::cpu_has_avx2_fma();
  }
  return false;
}

const KernelTable& table(Isa isa) {
  require(isa_supported(isa), ErrorKind::InvalidArgument,
          std::string("kernel variant not supported here: ") + to_string(isa));
  return isa == Isa::Avx2 ? *detail::avx2_table() : detail::scalar_table();
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

Isa best_supported() { return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

}  // namespace cpt::kern
