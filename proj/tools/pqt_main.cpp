#include <string>
#include <vector>

#include "pqt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return pqt::run_cli(args);
}
