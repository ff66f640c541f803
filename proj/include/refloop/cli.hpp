#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace refloop {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 per-task or runtime errors, 2 usage/config errors,
/// 130 interrupted.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::atomic<bool>* cancel = nullptr);

}  // namespace refloop
