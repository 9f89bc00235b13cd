#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace qbic::lsq {

/// Fills `residuals` (already sized to the number of observations).
using ResidualFn = std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residuals)>;
/// Fills `jacobian` (observations x parameters) of the residual vector.
using JacobianFn = std::function<void(const Eigen::VectorXd& params, Eigen::MatrixXd& jacobian)>;
/// Rejects parameter vectors outside the model's domain.
using FeasibleFn = std::function<bool(const Eigen::VectorXd& params)>;

struct Problem {
  Eigen::Index observations = 0;
  ResidualFn residuals;
  JacobianFn jacobian;  // central differences when empty
  FeasibleFn feasible;  // everything is feasible when empty
};

struct Options {
  int max_iterations = 500;
  double relative_cost_tolerance = 1e-15;
  double step_tolerance = 1e-13;
  double gradient_tolerance = 1e-14;
  double initial_damping = 1e-3;
};

struct Result {
  Eigen::VectorXd params;
  /// s^2 (J^T J)^-1 with s^2 = SSR / (n - p); NaN entries when J^T J is singular.
  Eigen::MatrixXd covariance;
  double sum_squares = 0.0;
  double rms = 0.0;
  int iterations = 0;
  bool converged = false;
  bool covariance_valid = false;
  std::string stop_reason;
};

/// Levenberg-Marquardt with Marquardt's diagonal scaling. The damping term is
/// lambda * diag(J^T J); accepted steps shrink lambda tenfold, rejected steps
/// (cost increase or infeasible point) grow it tenfold.
Result levenberg_marquardt(const Problem& problem, const Eigen::VectorXd& initial,
                           const Options& options = {});

}  // namespace qbic::lsq
