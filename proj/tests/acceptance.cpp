// One PASS/FAIL line per acceptance criterion; nonzero exit when any fails.
// ROTINV_ACCEPTANCE_QUICK=1 skips the training criteria.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "property_suite.hpp"

int main() {
  rotinv::checks::SuiteOptions opts;
  if (const char* q = std::getenv("ROTINV_ACCEPTANCE_QUICK"); q && std::string(q) == "1")
    opts.include_training = false;
  opts.log = &std::cerr;
  std::ofstream reports("acceptance_training_reports.jsonl");
  opts.reports = &reports;

  bool ok = true;
  for (const auto& r : rotinv::checks::run_suite(opts)) {
    std::cout << rotinv::checks::format_result(r) << std::endl;
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}
