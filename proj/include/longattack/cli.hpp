#pragma once

#include <ostream>

namespace longattack::cli {

// Runs `longattack <generate|train|attack|evaluate|sweep|report> ...`.
// Returns 0 on success, 1 on a usage or validation error, 2 on a runtime
// failure. Messages go to `out` and `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace longattack::cli
