#include <iostream>
#include <string>
#include <vector>

#include "xghsi/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return xghsi::run_cli(args, std::cout, std::cerr);
}
