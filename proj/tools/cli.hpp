#pragma once

#include "scl/report.hpp"

#include <optional>
#include <string>

namespace scl::cli {

// Command-line overrides applied on top of a configuration file.
struct Overrides {
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
    std::optional<std::uint64_t> seed;
    std::optional<int> order;
    std::optional<std::string> form;
    std::optional<std::string> method;
    std::optional<std::string> out;
    bool timings = false;
};

int cmd_reproduce(const std::string& id, const Overrides& o);

// Exit codes
inline constexpr int kOk = 0;
inline constexpr int kAssertionFailed = 1;
inline constexpr int kUsage = 2;
inline constexpr int kNumerical = 3;

std::string ensure_out_dir(const std::string& dir);

}  // namespace scl::cli
