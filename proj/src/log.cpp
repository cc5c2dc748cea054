#include "realdesc/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace realdesc::log {
namespace {

spdlog::logger& logger() {
  static auto instance = [] {
    auto l = spdlog::stderr_color_mt("realdesc");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    return l;
  }();
  return *instance;
}

}  // namespace

void debug(const std::string& message) { logger().debug(message); }
void info(const std::string& message) { logger().info(message); }
void warn(const std::string& message) { logger().warn(message); }
void error(const std::string& message) { logger().error(message); }
void set_level(const std::string& level) { logger().set_level(spdlog::level::from_str(level)); }

}  // namespace realdesc::log
