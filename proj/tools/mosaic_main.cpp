#include <string>
#include <vector>

#include "mosaic/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mosaic::run_cli(args);
}
