#pragma once

#include "regraph/config.hpp"
#include "regraph/csv.hpp"
#include "regraph/data.hpp"
#include "regraph/errors.hpp"
#include "regraph/evaluation.hpp"
#include "regraph/graph.hpp"
#include "regraph/log.hpp"
#include "regraph/models.hpp"
#include "regraph/numerics.hpp"
#include "regraph/pipeline.hpp"
#include "regraph/routing.hpp"
#include "regraph/serialize.hpp"
#include "regraph/synthetic.hpp"
#include "regraph/training.hpp"
