#include <iostream>
#include <string>
#include <vector>

#include "mtssl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mtssl::run_cli(args, std::cout, std::cerr);
}
