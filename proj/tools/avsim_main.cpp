#include <iostream>

#include "avsim/commands.hpp"

int main(int argc, char** argv) { return avsim::cli::run(argc, argv, std::cout, std::cerr); }
