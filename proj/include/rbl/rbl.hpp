#pragma once

#include "rbl/errors.hpp"
#include "rbl/geometry.hpp"
#include "rbl/linear_system.hpp"
#include "rbl/measurement.hpp"
#include "rbl/gabp.hpp"
#include "rbl/baseline.hpp"
#include "rbl/pipeline.hpp"
#include "rbl/bench.hpp"
