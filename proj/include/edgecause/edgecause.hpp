#pragma once

#include "edgecause/error.hpp"
#include "edgecause/rng.hpp"
#include "edgecause/network.hpp"
#include "edgecause/netstats.hpp"
#include "edgecause/ergm.hpp"
#include "edgecause/intervention.hpp"
#include "edgecause/estimators.hpp"
#include "edgecause/parallel.hpp"
#include "edgecause/simlab.hpp"
