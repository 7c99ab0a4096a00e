#include <iostream>

#include "irtimpute/cli.hpp"

int main(int argc, char** argv) { return irtimpute::run_cli(argc, argv, std::cout, std::cerr); }
