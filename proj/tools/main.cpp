#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return sepnet::run_cli(argc, argv, std::cout, std::cerr, std::cin); }
