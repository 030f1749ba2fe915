#include "perfstream/cli.hpp"

int main(int argc, char** argv) { return perfstream::run_cli(argc, argv); }
