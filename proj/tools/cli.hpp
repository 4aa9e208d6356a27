#pragma once

#include <iosfwd>

namespace cmr::cli {

// Exit codes: 0 ok, 1 validation or runtime failure, 2 usage error.
// Results go to `out`, progress and errors to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace cmr::cli
