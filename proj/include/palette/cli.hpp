#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace palette {

/// Exit codes: 0 success, 1 usage error, 2 runtime failure (JSON error on `err`).
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

std::string version_string();

}  // namespace palette
