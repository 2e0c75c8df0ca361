#include "kpanim/cli.hpp"

int main(int argc, char** argv) { return kpanim::cli::run(argc, argv); }
