#include <string>
#include <vector>

#include "sceneaware/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sceneaware::cli::run_command(args);
}
