#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return widecam::cli::run_cli(argc, argv, std::cout, std::cerr); }
