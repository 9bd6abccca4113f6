#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cvis::forge {

// The cvis-forge command line, minus the program name. Returns the exit code:
// 0 success, 1 domain error, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvis::forge
