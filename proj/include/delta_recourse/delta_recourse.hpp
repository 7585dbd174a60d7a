#pragma once

// Umbrella header: weighted naive Bayes, delta knowledge base and the
// explanation/clustering consumers built on it.

#include "cluster.hpp"
#include "data.hpp"
#include "delta.hpp"
#include "error.hpp"
#include "explain.hpp"
#include "nbmodel.hpp"
#include "pipeline.hpp"
#include "preprocess.hpp"
#include "rng.hpp"
#include "text.hpp"
