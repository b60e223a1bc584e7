#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return amplinet::cli::run(argc, argv, std::cout, std::cerr); }
