#include <vector>
#include <string>

#include "cifm/workbench.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cifm::run_workbench(args);
}
