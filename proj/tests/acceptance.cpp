// Runs every acceptance suite and prints one line per criterion.
// Optional arguments select suites; QAFEL_DATASET_DIR points at the data.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "qafel/acceptance.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> suites(argv + 1, argv + argc);
  if (suites.empty()) suites = qafel::suite_names();
  qafel::FigureSuiteOptions fig;
  if (const char* dir = std::getenv("QAFEL_DATASET_DIR")) fig.dataset_dir = dir;
  fig.progress = [](const std::string& s) { std::cout << "  " << s << std::endl; };
  bool ok = true;
  for (const auto& s : suites) {
    const auto rep = qafel::run_suite(s, fig);
    qafel::print_report(std::cout, rep);
    std::cout.flush();
    ok = ok && rep.passed();
  }
  std::cout << "acceptance: " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}
