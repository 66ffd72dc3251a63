#include <iostream>

#include "fastcaps/cli.hpp"

int main(int argc, char** argv) { return fastcaps::cli::run_cli(argc, argv, std::cout, std::cerr); }
