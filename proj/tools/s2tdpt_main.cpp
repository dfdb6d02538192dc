#include "s2tdpt/cli.hpp"

int main(int argc, char** argv) { return s2tdpt::run_cli(argc, argv); }
