#include <iostream>

#include "vilad/cli.hpp"

int main(int argc, char** argv) {
  return vilad::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
