#pragma once

#include "regret_router/core_types.hpp"
#include "regret_router/activations.hpp"
#include "regret_router/surrogates.hpp"
#include "regret_router/policy_net.hpp"
#include "regret_router/counterfactual.hpp"
#include "regret_router/synthetic.hpp"
#include "regret_router/baselines.hpp"
#include "regret_router/interval_router.hpp"
#include "regret_router/io.hpp"
#include "regret_router/evaluation.hpp"
