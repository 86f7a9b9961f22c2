#pragma once

// Umbrella header for the differentiable tensor primitives.
#include "mugen/core/elementwise.hpp"
#include "mugen/core/linalg.hpp"
#include "mugen/core/norm.hpp"
#include "mugen/core/shape_ops.hpp"
#include "mugen/core/spatial.hpp"
#include "mugen/core/tape.hpp"
#include "mugen/core/tensor.hpp"
