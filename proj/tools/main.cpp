#include "qctrl/cli.hpp"

int main(int argc, char** argv) { return qctrl::cli::run(argc, argv); }
