#pragma once

#include "dragonnet/arch.hpp"
#include "dragonnet/bench.hpp"
#include "dragonnet/checkpoint.hpp"
#include "dragonnet/datagen.hpp"
#include "dragonnet/dataset.hpp"
#include "dragonnet/errors.hpp"
#include "dragonnet/estimators.hpp"
#include "dragonnet/nn.hpp"
#include "dragonnet/objectives.hpp"
#include "dragonnet/rng.hpp"
