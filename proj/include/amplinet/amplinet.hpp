#pragma once

#include "amplinet/errors.hpp"
#include "amplinet/layers.hpp"
#include "amplinet/metrics.hpp"
#include "amplinet/model.hpp"
#include "amplinet/objective.hpp"
#include "amplinet/optim.hpp"
#include "amplinet/preprocess.hpp"
#include "amplinet/signal_io.hpp"
#include "amplinet/tensor.hpp"
#include "amplinet/train.hpp"
