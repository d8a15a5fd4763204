#include "fastfusion/cli.hpp"

int main(int argc, char** argv) { return fastfusion::cli::main(argc, argv); }
