#pragma once

#include <ostream>

namespace franca {

// Entry point of the command-line tool. Returns 0 on success, 1 on usage
// errors (unknown flags, missing files) and 2 on runtime failures.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

const char* build_tag();

}  // namespace franca
