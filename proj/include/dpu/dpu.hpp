#pragma once

#include "dpu/codec.hpp"
#include "dpu/commcost.hpp"
#include "dpu/config.hpp"
#include "dpu/contribution.hpp"
#include "dpu/data.hpp"
#include "dpu/error.hpp"
#include "dpu/nn.hpp"
#include "dpu/optim.hpp"
#include "dpu/report.hpp"
#include "dpu/rng.hpp"
#include "dpu/rounds.hpp"
#include "dpu/update.hpp"
