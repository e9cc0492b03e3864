#pragma once

// Umbrella header.

#include "hybridid/core.hpp"
#include "hybridid/integrate.hpp"
#include "hybridid/models.hpp"
#include "hybridid/pseudo_data.hpp"
#include "hybridid/nls.hpp"
#include "hybridid/estimate.hpp"
#include "hybridid/analyze.hpp"
#include "hybridid/mlp.hpp"
#include "hybridid/hybrid.hpp"
#include "hybridid/mpc.hpp"
#include "hybridid/io.hpp"
#include "hybridid/config.hpp"
#include "hybridid/pipeline.hpp"
