#include "rebalance/cli.hpp"

int main(int argc, char** argv) { return rebalance::run_cli(argc, argv); }
