#include "neuron_lab/cli.hpp"

int main(int argc, char** argv) { return neuron_lab::cli_main(argc, argv); }
