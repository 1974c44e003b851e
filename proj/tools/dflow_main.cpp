#include "dflow/cli.hpp"

int main(int argc, char** argv) { return dflow::cli_main(argc, argv); }
