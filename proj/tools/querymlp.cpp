#include "querymlp/cli.hpp"

int main(int argc, char** argv) { return querymlp::cli::run(argc, argv); }
