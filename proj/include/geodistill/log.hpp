#pragma once

#include <spdlog/spdlog.h>

namespace geodistill {

/// Configures the default logger from the GEODISTILL_LOG environment
/// variable (trace|debug|info|warn|error|off). Safe to call repeatedly.
void init_logging();

}  // namespace geodistill
