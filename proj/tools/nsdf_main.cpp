#include <iostream>
#include <string>
#include <vector>

#include "nsdf/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return nsdf::run_cli(args, std::cout, std::cerr);
}
