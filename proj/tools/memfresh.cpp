#include "memfresh/cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return memfresh::cli::run(argc, argv, std::cout, std::cerr); }
