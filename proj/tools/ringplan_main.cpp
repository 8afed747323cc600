#include "ringplan/cli.hpp"

int main(int argc, char** argv) { return ringplan::run_cli(argc, argv); }
