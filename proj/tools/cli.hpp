#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mixfc::cli {

/// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
enum ExitCode : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace mixfc::cli
