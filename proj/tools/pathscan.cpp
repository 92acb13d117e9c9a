#include <iostream>
#include <string>
#include <vector>

#include "pathscan/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pathscan::run_cli(args, std::cout, std::cerr);
}
