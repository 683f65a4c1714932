#pragma once

#include <spdlog/spdlog.h>

namespace panp {

/// Applies the PANP_LOG environment variable (error | info | debug); default info.
void init_logging();

}  // namespace panp
