#include <iostream>
#include <string>
#include <vector>

#include "ikdp/cli.hpp"

int main(int argc, char** argv) {
  return ikdp::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
