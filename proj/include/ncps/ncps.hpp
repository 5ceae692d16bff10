#pragma once

#include "ncps/error.hpp"
#include "ncps/girsanov.hpp"
#include "ncps/harness.hpp"
#include "ncps/io.hpp"
#include "ncps/linalg.hpp"
#include "ncps/malliavin.hpp"
#include "ncps/model.hpp"
#include "ncps/mollifier.hpp"
#include "ncps/parallel.hpp"
#include "ncps/random.hpp"
#include "ncps/sde.hpp"
#include "ncps/statistics.hpp"
#include "ncps/variational.hpp"
