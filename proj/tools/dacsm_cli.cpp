#include "dacsm/cli.hpp"

int main(int argc, char** argv) { return dacsm::run_cli(argc, argv); }
