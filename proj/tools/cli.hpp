#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace streamrec::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsageError = 2 };

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Binary container data read with `--input -` comes from
/// `in`; reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace streamrec::cli
