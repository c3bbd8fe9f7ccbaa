#include "enerbridge/cli.hpp"

int main(int argc, char** argv) { return enerbridge::run_cli(argc, argv); }
