#include "canshape/cli.hpp"

int main(int argc, char** argv) { return canshape::cli::run(argc, argv); }
