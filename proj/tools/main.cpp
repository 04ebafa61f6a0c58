#include "stca/commands.hpp"

int main(int argc, char** argv) { return stca::cli_main(argc, argv); }
