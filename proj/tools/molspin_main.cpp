#include <iostream>

#include "molspin/cli.hpp"

int main(int argc, char** argv) { return molspin::cli::main(argc, argv, std::cout, std::cerr); }
