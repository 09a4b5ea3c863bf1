#include "otl/cli.hpp"

int main(int argc, char** argv) { return otl::cli::run(argc, argv); }
