#pragma once

#include "vseg/checkpoint.hpp"
#include "vseg/config.hpp"
#include "vseg/errors.hpp"
#include "vseg/inference.hpp"
#include "vseg/kernel/ops.hpp"
#include "vseg/kernel/optim.hpp"
#include "vseg/kernel/tensor.hpp"
#include "vseg/losses.hpp"
#include "vseg/metrics.hpp"
#include "vseg/phantom.hpp"
#include "vseg/rng.hpp"
#include "vseg/sampling.hpp"
#include "vseg/training.hpp"
#include "vseg/uncertainty.hpp"
#include "vseg/vnet.hpp"
#include "vseg/volume_io.hpp"
#include "vseg/volumes.hpp"
