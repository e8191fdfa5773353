#include <iostream>

#include "salcar/cli.hpp"

int main(int argc, char** argv) {
  return salcar::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
