#include <iostream>

#include "dynba/cli.hpp"

int main(int argc, char** argv) {
  return dynba::cli::run(argc, argv, std::cout, std::cerr);
}
