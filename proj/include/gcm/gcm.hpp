#pragma once

#include "gcm/dataset.hpp"
#include "gcm/error.hpp"
#include "gcm/multi.hpp"
#include "gcm/nofreelunch.hpp"
#include "gcm/normal.hpp"
#include "gcm/parallel.hpp"
#include "gcm/regression.hpp"
#include "gcm/rng.hpp"
#include "gcm/simlab.hpp"
#include "gcm/univariate.hpp"
