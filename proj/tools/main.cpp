#include "climemu/cli.hpp"

int main(int argc, char** argv) { return climemu::run_cli(argc, argv); }
