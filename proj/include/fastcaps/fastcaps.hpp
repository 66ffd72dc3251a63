#pragma once

#include "fastcaps/accel_model.hpp"
#include "fastcaps/capsnet.hpp"
#include "fastcaps/config.hpp"
#include "fastcaps/conv.hpp"
#include "fastcaps/error.hpp"
#include "fastcaps/fxp.hpp"
#include "fastcaps/io.hpp"
#include "fastcaps/mask.hpp"
#include "fastcaps/pruning.hpp"
#include "fastcaps/random.hpp"
#include "fastcaps/routing.hpp"
#include "fastcaps/tensor.hpp"
