#include "cli.hpp"

int main(int argc, char** argv) { return slidekit::cli::run(argc, argv); }
