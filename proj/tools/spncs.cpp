#include "spncs/cli.hpp"

int main(int argc, char** argv) { return spncs::cli::run(argc, argv); }
