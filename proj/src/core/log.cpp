#include "panp/core/log.hpp"

#include <cstdlib>
#include <string_view>

namespace panp {

void init_logging() {
  const char* env = std::getenv("PANP_LOG");
  const std::string_view level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
}

}  // namespace panp
