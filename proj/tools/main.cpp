#include "cli.hpp"

int main(int argc, char** argv) { return liftvsr::cli::run(argc, argv); }
