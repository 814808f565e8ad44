#include <sstream>

#include "doctest.h"
#include "pdarts/gradcheck_suite.hpp"

using namespace pdarts;

TEST_CASE("gradcheck suite covers ops, edges and a small network") {
  std::ostringstream log;
  const auto report = run_gradcheck_suite(2, 1e-5, &log);
  CHECK(report.entries.size() == 2 * 8 + 2 + 3);
  for (const auto& e : report.entries) {
    CAPTURE(e.name);
    CHECK(e.seeds == 2);
    CHECK(e.max_error <= 1e-5);
  }
  CHECK(report.passed());
  CHECK(log.str().find("ok   op/sep_conv_5x5/stride2") != std::string::npos);

  // An impossible tolerance fails every entry with nonzero error.
  CHECK_FALSE(run_gradcheck_suite(1, -1.0).passed());
}
