#include <string>
#include <vector>

#include "tabsynth/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tabsynth::cli::run(args);
}
