#include <iostream>
#include <string>
#include <vector>

#include "palette/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return palette::dispatch(args, std::cout, std::cerr);
}
