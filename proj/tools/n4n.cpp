#include "cli.hpp"

int main(int argc, char** argv) { return n4n::cli::run(argc, argv); }
