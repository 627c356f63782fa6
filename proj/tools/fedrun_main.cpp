#include <iostream>
#include <string>
#include <vector>

#include "fedrun/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fedrun::run_cli(args, std::cout, std::cerr);
}
