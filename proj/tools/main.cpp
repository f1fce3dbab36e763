#include "voxrec/cli.hpp"

int main(int argc, char** argv) { return voxrec::run_cli(argc, argv); }
