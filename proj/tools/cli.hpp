#pragma once

#include <ostream>

namespace alff::cli {

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace alff::cli
