#include <iostream>

#include "moldgan/cli.hpp"

int main(int argc, char** argv) {
  return moldgan::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
