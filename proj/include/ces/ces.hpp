// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ces/config.hpp"
#include "ces/eval.hpp"
#include "ces/experiment.hpp"
#include "ces/io.hpp"
#include "ces/objective.hpp"
#include "ces/parallel.hpp"
#include "ces/policy.hpp"
#include "ces/random.hpp"
#include "ces/rollout.hpp"
#include "ces/shaping.hpp"
#include "ces/tasks.hpp"
#include "ces/trainer.hpp"
#include "ces/vocabulary.hpp"
