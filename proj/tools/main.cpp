#include "cli.hpp"

int main(int argc, char** argv) { return mixfc::cli::run(argc, argv); }
