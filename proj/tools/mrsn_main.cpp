#include <iostream>

#include "mrsn/app.hpp"

int main(int argc, char** argv) { return mrsn::run_cli(argc, argv, std::cout, std::cerr); }
