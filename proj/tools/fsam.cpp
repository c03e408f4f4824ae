#include "fsam/cli.hpp"

int main(int argc, char** argv) { return fsam::cli::run(argc, argv); }
