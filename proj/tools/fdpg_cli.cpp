#include <iostream>
#include <string>
#include <vector>

#include "fdpg/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return fdpg::cli_run(args, std::cout, std::cerr);
}
