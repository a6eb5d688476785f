#include "pfsd/cli.hpp"

int main(int argc, char** argv) { return pfsd::run_cli(argc, argv); }
