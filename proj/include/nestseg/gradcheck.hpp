#pragma once

#include <functional>
#include <string>

#include "nestseg/tape.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg {

// Builds the scalar under test on the given tape from the leaf id of the
// point being perturbed; called once per gradient check and twice per
// coordinate for the central differences.
using ScalarFn = std::function<Tape64::Id(Tape64&, Tape64::Id)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;  // flat coordinate of the largest error
  std::string message;            // non-empty when the check failed structurally
};

// Central-difference comparison of the analytic gradient at `point`, always
// in 64-bit arithmetic. rel_err = |analytic - numeric| / max(1, |analytic|,
// |numeric|); passes iff the maximum over coordinates is <= tol. A non-finite
// value anywhere fails with a message naming the coordinate.
GradCheckReport gradcheck(const ScalarFn& f, const Tensor64& point, double eps = 1e-4,
                          double tol = 1e-4);

struct BatteryEntry {
  std::string name;
  GradCheckReport report;  // the worst instance's report
  int instances = 0;
};

// Every differentiable primitive, a conv+relu composite, and the hybrid loss
// (single-head and supervised aggregate), each checked on `instances` seeded
// random inputs. Inputs for relu and maxpool2 are nudged away from their
// kinks, where one-sided slopes make central differences meaningless. An
// empty filter runs everything; otherwise only entries whose name contains
// the filter substring.
std::vector<BatteryEntry> gradcheck_battery(std::uint64_t seed, int instances, double eps,
                                            double tol, const std::string& filter = "");

}  // namespace nestseg
