#include "proker/cli.hpp"

int main(int argc, char** argv) { return proker::cli::run(argc, argv); }
