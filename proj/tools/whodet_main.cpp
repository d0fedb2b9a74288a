#include <iostream>

#include "whodet/cli.hpp"

int main(int argc, char** argv) {
    return whodet::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
