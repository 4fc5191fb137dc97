#include "cped/cli.hpp"

int main(int argc, char** argv) { return cped::harness::run_cli(argc, argv); }
