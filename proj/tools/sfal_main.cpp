#include "sfal/cli.hpp"

int main(int argc, char** argv) { return sfal::run_cli(argc, argv); }
