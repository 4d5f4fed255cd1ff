#pragma once

#include <slicegraph/data_io.hpp>
#include <slicegraph/errors.hpp>
#include <slicegraph/experiment.hpp>
#include <slicegraph/graph.hpp>
#include <slicegraph/metrics.hpp>
#include <slicegraph/models.hpp>
#include <slicegraph/numerics.hpp>
#include <slicegraph/serialization.hpp>
#include <slicegraph/training.hpp>
