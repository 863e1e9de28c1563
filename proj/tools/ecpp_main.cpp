#include <iostream>

#include "ecpp/cli.hpp"

int main(int argc, char** argv) { return ecpp::run_cli(argc, argv, std::cout, std::cerr); }
