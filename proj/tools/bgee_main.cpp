#include "bgee/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return bgee::run_cli(argc, argv, std::cout, std::cerr); }
