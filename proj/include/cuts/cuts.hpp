#pragma once

// Umbrella header.

#include "cuts/alpha.hpp"
#include "cuts/checkpoint.hpp"
#include "cuts/corruption.hpp"
#include "cuts/dataset.hpp"
#include "cuts/experiment.hpp"
#include "cuts/matrix.hpp"
#include "cuts/metrics.hpp"
#include "cuts/nn.hpp"
#include "cuts/rng.hpp"
#include "cuts/task_vector.hpp"
#include "cuts/weights.hpp"
