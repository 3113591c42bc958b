#pragma once

namespace priorlens::cli {

// Entry point of the priorlens tool. Returns 0 on success, 1 on invalid
// input or configuration, 2 on runtime failure.
int dispatch(int argc, char** argv);

}  // namespace priorlens::cli
