#include "empeval/cli.hpp"

int main(int argc, char** argv) { return empeval::run_cli(argc, argv); }
