#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace slidekit::cli {

// Exit codes: 0 success, 1 usage error, 2 data error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace slidekit::cli
