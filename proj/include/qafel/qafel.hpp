#pragma once

#include "qafel/acceptance.hpp"
#include "qafel/analysis.hpp"
#include "qafel/bits.hpp"
#include "qafel/config.hpp"
#include "qafel/core.hpp"
#include "qafel/dataset.hpp"
#include "qafel/experiment.hpp"
#include "qafel/format.hpp"
#include "qafel/objectives.hpp"
#include "qafel/protocol.hpp"
#include "qafel/quantizers.hpp"
#include "qafel/random.hpp"
#include "qafel/sim.hpp"
