#pragma once

#include <gsar/effects.hpp>
#include <gsar/error.hpp>
#include <gsar/estimator.hpp>
#include <gsar/family.hpp>
#include <gsar/glm.hpp>
#include <gsar/optimize.hpp>
#include <gsar/simkit.hpp>
#include <gsar/spalg.hpp>
#include <gsar/weights.hpp>
