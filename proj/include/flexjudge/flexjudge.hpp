#pragma once

#include "flexjudge/backend.hpp"
#include "flexjudge/core.hpp"
#include "flexjudge/curation.hpp"
#include "flexjudge/error.hpp"
#include "flexjudge/metrics.hpp"
#include "flexjudge/parsing.hpp"
#include "flexjudge/prompting.hpp"
#include "flexjudge/strategies.hpp"
#include "flexjudge/util.hpp"
