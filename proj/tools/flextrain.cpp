#include <iostream>

#include "flextrain/cli.hpp"

int main(int argc, char** argv) { return flextrain::run_cli(argc, argv, std::cout, std::cerr); }
