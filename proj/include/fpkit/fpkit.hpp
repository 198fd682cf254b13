#pragma once

// Umbrella header for the failure-prediction toolkit.

#include "fpkit/calibration.hpp"
#include "fpkit/common.hpp"
#include "fpkit/datasets.hpp"
#include "fpkit/eval_set.hpp"
#include "fpkit/losses.hpp"
#include "fpkit/metrics.hpp"
#include "fpkit/mixture.hpp"
#include "fpkit/mlp.hpp"
#include "fpkit/scores.hpp"
#include "fpkit/train.hpp"
