#include <iostream>

#include "csam_cli/commands.hpp"

int main(int argc, char** argv) { return csam::cli::run(argc, argv, std::cout, std::cerr); }
