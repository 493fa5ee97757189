#include <iostream>
#include <string>
#include <vector>

#include "cmdse/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cmdse::cli::dispatch(args, std::cout, std::cerr);
}
