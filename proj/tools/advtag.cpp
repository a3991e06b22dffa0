#include "advtag/cli.hpp"

int main(int argc, char** argv) { return advtag::cli::run(argc, argv); }
