#ifndef FASTVOL_ESTIMATES_HPP
#define FASTVOL_ESTIMATES_HPP

#include <cstdint>
#include <string>

namespace fastvol {

// A Monte-Carlo estimate with seed provenance; identical inputs reproduce
// bit-identical values regardless of worker count.
struct McEstimate {
  double value = 0;
  double std_error = 0;
  long n = 0;
  std::uint64_t seed = 0;
  std::string notes;
};

struct SolveDiagnostics {
  int iterations = 0;
  double residual = 0;
  bool converged = false;
  std::string notes;
};

}  // namespace fastvol

#endif
