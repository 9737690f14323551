#include <iostream>

#include "fundus/cli.hpp"

int main(int argc, char** argv) {
  return fundus::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
