#pragma once

// Convenience umbrella: pulls in the whole library.

#include "neckbench/backbone.hpp"
#include "neckbench/boxes.hpp"
#include "neckbench/config.hpp"
#include "neckbench/core.hpp"
#include "neckbench/data.hpp"
#include "neckbench/gradcheck.hpp"
#include "neckbench/head.hpp"
#include "neckbench/metrics.hpp"
#include "neckbench/necks.hpp"
#include "neckbench/ops.hpp"
#include "neckbench/params.hpp"
#include "neckbench/train.hpp"
