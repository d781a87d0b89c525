#pragma once

#include <cstdlib>
#include <memory>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace streamloc {

/// Shared stderr logger. Level comes from STREAMLOC_LOG (error|info|debug), default error.
inline spdlog::logger& log() {
    static const std::shared_ptr<spdlog::logger> logger = [] {
        auto l = spdlog::stderr_color_mt("streamloc");
        l->set_pattern("[%l] %v");
        spdlog::level::level_enum level = spdlog::level::err;
        if (const char* env = std::getenv("STREAMLOC_LOG")) {
            const std::string_view v(env);
            if (v == "debug") level = spdlog::level::debug;
            else if (v == "info") level = spdlog::level::info;
            else if (v == "warn" || v == "warning") level = spdlog::level::warn;
        }
        l->set_level(level);
        return l;
    }();
    return *logger;
}

}  // namespace streamloc
