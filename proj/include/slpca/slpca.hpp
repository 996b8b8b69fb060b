#pragma once

#include "slpca/evaluation.hpp"
#include "slpca/io.hpp"
#include "slpca/link.hpp"
#include "slpca/objective.hpp"
#include "slpca/rng.hpp"
#include "slpca/selection.hpp"
#include "slpca/simulation.hpp"
#include "slpca/solver.hpp"
#include "slpca/threading.hpp"
#include "slpca/types.hpp"
