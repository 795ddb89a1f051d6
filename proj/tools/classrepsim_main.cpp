#include <string>
#include <vector>

#include "crs/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return crs::run_cli(args);
}
