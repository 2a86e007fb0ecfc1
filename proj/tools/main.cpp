#include <iostream>

#include "isotropy/cli.h"

int main(int argc, char** argv) {
    return isotropy::run_cli(argc, argv, std::cout, std::cerr);
}
