#include "doublematch/cli.hpp"

int main(int argc, char** argv) { return dm::cli_main(argc, argv); }
