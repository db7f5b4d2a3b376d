#pragma once

#include "tfuse/gradcheck.hpp"
#include "tfuse/ops.hpp"
#include "tfuse/parameters.hpp"

namespace tfuse::testing {

using tfuse::check_op;

}  // namespace tfuse::testing
