#pragma once

// Everything in one include.

#include "ffkit/errors.hpp"
#include "ffkit/rng.hpp"
#include "ffkit/tensor.hpp"
#include "ffkit/optim.hpp"
#include "ffkit/lora.hpp"
#include "ffkit/data.hpp"
#include "ffkit/model.hpp"
#include "ffkit/losses.hpp"
#include "ffkit/pretrain.hpp"
#include "ffkit/adapters.hpp"
#include "ffkit/log.hpp"
#include "ffkit/metrics.hpp"
#include "ffkit/engine.hpp"
#include "ffkit/checkpoint.hpp"
#include "ffkit/dataset_io.hpp"
#include "ffkit/config.hpp"
#include "ffkit/cli.hpp"
