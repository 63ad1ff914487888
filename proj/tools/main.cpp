#include "poolforge/cli.hpp"

int main(int argc, char** argv) { return poolforge::run_cli(argc, argv); }
