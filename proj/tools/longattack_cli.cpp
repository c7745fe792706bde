#include <iostream>

#include "longattack/cli.hpp"

int main(int argc, char** argv) { return longattack::cli::dispatch(argc, argv, std::cout, std::cerr); }
