#include <iostream>

#include "skdt/cli.hpp"

int main(int argc, char** argv) { return skdt::cli::cli_dispatch(argc, argv, std::cout, std::cerr); }
