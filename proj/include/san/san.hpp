#pragma once

#include "san/errors.hpp"
#include "san/rng.hpp"
#include "san/core_math.hpp"
#include "san/losses.hpp"
#include "san/model.hpp"
#include "san/objective.hpp"
#include "san/metrics.hpp"
#include "san/data.hpp"
#include "san/train.hpp"
#include "san/gradcheck.hpp"
#include "san/harness.hpp"
