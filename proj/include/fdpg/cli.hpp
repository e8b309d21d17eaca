#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fdpg {

// Exit codes: 0 success, 1 configuration or usage error, 2 estimator abort or
// support violation, 3 failed acceptance criteria.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fdpg
