#include "priorlens/cli.hpp"

int main(int argc, char** argv) { return priorlens::cli::dispatch(argc, argv); }
