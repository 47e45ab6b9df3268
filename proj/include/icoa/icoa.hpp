#pragma once

#include "icoa/rng.hpp"
#include "icoa/datagen.hpp"
#include "icoa/learners.hpp"
#include "icoa/ensemble_math.hpp"
#include "icoa/trainer.hpp"
#include "icoa/harness.hpp"
