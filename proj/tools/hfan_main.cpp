#include "hfan/cli.hpp"

int main(int argc, char** argv) { return hfan::cli::run(argc, argv); }
