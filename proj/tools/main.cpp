#include "caae/cli.hpp"

int main(int argc, char** argv) { return caae::cli_main(argc, argv); }
