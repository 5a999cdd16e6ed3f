#include "mep/cli.hpp"

int main(int argc, char** argv) { return mep::cli::main(argc, argv); }
