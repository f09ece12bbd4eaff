#include <iostream>

#include "deft/cli.hpp"

int main(int argc, char** argv) { return deft::run_cli(argc, argv, std::cout, std::cerr); }
