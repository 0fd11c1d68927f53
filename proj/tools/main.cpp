#include "milgrad/cli.hpp"

int main(int argc, char** argv) { return milgrad::cli_main(argc, argv); }
