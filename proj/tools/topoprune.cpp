#include <string>
#include <vector>

#include "topoprune/cli.hpp"

int main(int argc, char** argv) {
  return topoprune::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
