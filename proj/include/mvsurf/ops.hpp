#pragma once

// Umbrella header for the differentiable op set.

#include "mvsurf/ops_conv.hpp"
#include "mvsurf/ops_elementwise.hpp"
#include "mvsurf/ops_linalg.hpp"
#include "mvsurf/ops_sample.hpp"
#include "mvsurf/ops_shape.hpp"
