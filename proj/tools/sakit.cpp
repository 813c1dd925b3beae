#include <iostream>
#include <string>
#include <vector>

#include "sakit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return sakit::cli::run_command(args, std::cout, std::cerr);
}
