#include <iostream>

#include "uad/cli.hpp"

int main(int argc, char** argv) {
    return uad::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
