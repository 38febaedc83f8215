#pragma once

// Umbrella header: pulls in the whole library.

#include "trsbts/types.hpp"
#include "trsbts/error.hpp"
#include "trsbts/linalg.hpp"
#include "trsbts/reference.hpp"
#include "trsbts/conditioning.hpp"
#include "trsbts/bridge.hpp"
#include "trsbts/descriptor.hpp"
#include "trsbts/generator.hpp"
#include "trsbts/scoring.hpp"
#include "trsbts/dgp.hpp"
#include "trsbts/io.hpp"
#include "trsbts/experiments.hpp"
#include "trsbts/config.hpp"
#include "trsbts/harness.hpp"
