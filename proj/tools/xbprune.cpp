#include <iostream>

#include "xbprune/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return xbprune::run_cli(args, std::cout, std::cerr);
}
