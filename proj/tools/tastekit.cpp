#include <iostream>

#include "tastekit/cli.hpp"

int main(int argc, char** argv) { return tastekit::cli::run(argc, argv, std::cout, std::cerr); }
