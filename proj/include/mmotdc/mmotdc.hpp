#pragma once

#include "mmotdc/baselines.hpp"
#include "mmotdc/dc_solver.hpp"
#include "mmotdc/error.hpp"
#include "mmotdc/experiments.hpp"
#include "mmotdc/io.hpp"
#include "mmotdc/random.hpp"
#include "mmotdc/sinkhorn.hpp"
#include "mmotdc/tensor.hpp"
