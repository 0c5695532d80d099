#include "commands.hpp"

int main(int argc, char** argv) {
    return causalvid::cli::run_cli(argc, argv);
}
