#include "irrigation/cli.hpp"

int main(int argc, char** argv) { return irrigation::cli::run(argc, argv); }
