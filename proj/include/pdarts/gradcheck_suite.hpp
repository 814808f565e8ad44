#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pdarts {

struct GradcheckEntry {
  std::string name;
  int seeds = 0;
  double max_error = 0;
  bool passed = false;
};

struct GradcheckReport {
  double tolerance = 0;
  std::vector<GradcheckEntry> entries;

  bool passed() const;
};

/// Finite differences in double precision against reverse mode for every
/// catalog operation at both strides (input and parameters), the mixed edge
/// (input and alpha) and a 2-cell super-network (input, weights and alpha),
/// each over `seeds` random draws. One line per entry goes to `log`.
GradcheckReport run_gradcheck_suite(int seeds = 20, double tolerance = 1e-5, std::ostream* log = nullptr);

}  // namespace pdarts
