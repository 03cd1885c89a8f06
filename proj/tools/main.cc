#include <iostream>
#include <string>
#include <vector>

#include "commands.h"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return xaib::cli::RunCli(args, std::cout, std::cerr, xaib::cli::ProcessEnv());
}
