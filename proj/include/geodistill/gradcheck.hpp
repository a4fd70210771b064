#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Central finite-difference checks of every analytic gradient in the
// toolkit, run in double precision on toy problems.
namespace geodistill::gradcheck {

struct Options {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-3;
  int parameters = 120;  // sampled per network loss
  std::uint64_t seed = 7;
};

struct Result {
  std::string name;
  int checked = 0;
  int skipped = 0;  // perturbations that crossed a kink
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Checks `analytic` against central differences of `loss` at the listed
/// coordinates. `signature` (optional) returns the discrete choices behind
/// a loss value; coordinates whose +-step evaluations change it are skipped.
Result check(const std::string& name, std::vector<double> x,
             const std::function<double(const std::vector<double>&)>& loss,
             const std::vector<double>& analytic, const std::vector<std::size_t>& coordinates,
             const Options& options,
             const std::function<std::vector<int>(const std::vector<double>&)>& signature = {});

/// Network losses (L_c, L_r, combined, RGL, NGL, GSL) on f=16, s=4, N=8,
/// A=3, and the point/ARAP/smooth alignment losses through a 3-bone LBS.
std::vector<Result> run_all(const Options& options = {});

}  // namespace geodistill::gradcheck
