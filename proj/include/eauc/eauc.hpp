// Copyright 2026 The EaUC Authors
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

// Umbrella header.

#pragma once

#include "eauc/autodiff.hpp"
#include "eauc/bnn_model.hpp"
#include "eauc/calib_metrics.hpp"
#include "eauc/checkpoint.hpp"
#include "eauc/config.hpp"
#include "eauc/datasets.hpp"
#include "eauc/eau_loss.hpp"
#include "eauc/error.hpp"
#include "eauc/harness.hpp"
#include "eauc/optim.hpp"
#include "eauc/params.hpp"
#include "eauc/tensor.hpp"
#include "eauc/traj_model.hpp"
