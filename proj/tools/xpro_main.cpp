#include "xpro/cli.hpp"

int main(int argc, char** argv) { return xpro::run_cli(argc, argv); }
