#include <iostream>

#include "spacy/cli/cli.hpp"

int main(int argc, char** argv) {
  return spacy::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
