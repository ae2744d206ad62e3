#include <iostream>

#include "mvldp/cli_reporting.hpp"

int main(int argc, char** argv) { return mvldp::run(argc, argv, std::cout, std::cerr); }
