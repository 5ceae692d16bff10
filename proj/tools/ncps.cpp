#include "ncps/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ncps::cli_main(argc, argv, std::cout, std::cerr); }
