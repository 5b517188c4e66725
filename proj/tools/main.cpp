#include "petsgm/cli.hpp"

int main(int argc, char** argv) { return petsgm::run_cli(argc, argv); }
