#include "cli.hpp"

int main(int argc, char** argv) { return zp::cli::cli_main(argc, argv); }
