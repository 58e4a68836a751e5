#include <iostream>

#include "hiad/cli.hpp"

int main(int argc, char** argv) { return hiad::run_cli(argc, argv, std::cout, std::cerr); }
