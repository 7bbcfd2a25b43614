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

#include "cpt/kernels.hpp"

namespace cpt::kern::detail {

const KernelTable& scalar_table();

// nullptr when the variant is not compiled for this target.
const KernelTable* avx2_table();

bool cpu_has_avx2_fma();

}  // namespace cpt::kern::detail
