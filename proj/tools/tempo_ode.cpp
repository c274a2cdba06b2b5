#include <iostream>

#include "tempo/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tempo::cli::run(std::move(args), std::cout, std::cerr);
}
