#pragma once

#include "mingrad/errors.hpp"
#include "mingrad/estimators.hpp"
#include "mingrad/experiments.hpp"
#include "mingrad/io.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/outer.hpp"
#include "mingrad/parallel.hpp"
#include "mingrad/problems.hpp"
#include "mingrad/rng.hpp"
#include "mingrad/selftest.hpp"
#include "mingrad/solvers.hpp"
