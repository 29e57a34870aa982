#pragma once

#include "cmi/codebook.hpp"
#include "cmi/config.hpp"
#include "cmi/error.hpp"
#include "cmi/experiment.hpp"
#include "cmi/features.hpp"
#include "cmi/index.hpp"
#include "cmi/metrics.hpp"
#include "cmi/query.hpp"
#include "cmi/signatures.hpp"
