#include <string>
#include <vector>

#include "radsum/cli.hpp"

int main(int argc, char** argv) {
    return radsum::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
