#include <iostream>

#include "franca/cli.hpp"

int main(int argc, char** argv) { return franca::cli_dispatch(argc, argv, std::cout, std::cerr); }
