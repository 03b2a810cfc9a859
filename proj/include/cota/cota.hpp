// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cota/agent.hpp"
#include "cota/backend.hpp"
#include "cota/data_ops.hpp"
#include "cota/error.hpp"
#include "cota/eval.hpp"
#include "cota/expression.hpp"
#include "cota/fixtures.hpp"
#include "cota/gen_model.hpp"
#include "cota/gen_program.hpp"
#include "cota/json_text.hpp"
#include "cota/registry.hpp"
#include "cota/remote.hpp"
#include "cota/scene.hpp"
#include "cota/tools.hpp"
#include "cota/trace.hpp"
