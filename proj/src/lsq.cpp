#include "qbic/lsq.hpp"

#include "qbic/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qbic::lsq {
namespace {

void numeric_jacobian(const Problem& problem, const Eigen::VectorXd& x, Eigen::MatrixXd& jac) {
  Eigen::VectorXd plus(problem.observations), minus(problem.observations);
  Eigen::VectorXd probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(x[j]));
    probe[j] = x[j] + h;
    problem.residuals(probe, plus);
    probe[j] = x[j] - h;
    problem.residuals(probe, minus);
    probe[j] = x[j];
    jac.col(j) = (plus - minus) / (2.0 * h);
  }
}

double squared_norm(const Eigen::VectorXd& r) {
  CompensatedSum acc;
  for (Eigen::Index i = 0; i < r.size(); ++i) acc.add(r[i] * r[i]);
  return acc.value();
}

}  // namespace

Result levenberg_marquardt(const Problem& problem, const Eigen::VectorXd& initial,
                           const Options& options) {
  const Eigen::Index n = problem.observations;
  const Eigen::Index p = initial.size();
  require(n >= p && p > 0, ErrorKind::FitFailure,
          "least squares: fewer observations than parameters");

  auto jacobian_at = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& jac) {
    if (problem.jacobian) {
      problem.jacobian(x, jac);
    } else {
      numeric_jacobian(problem, x, jac);
    }
  };
  auto feasible = [&](const Eigen::VectorXd& x) {
    if (!x.allFinite()) return false;
    return !problem.feasible || problem.feasible(x);
  };

  Result result;
  Eigen::VectorXd x = initial;
  require(feasible(x), ErrorKind::FitFailure, "least squares: infeasible starting point");

  Eigen::VectorXd r(n), trial_r(n);
  Eigen::MatrixXd jac(n, p);
  problem.residuals(x, r);
  double cost = squared_norm(r);
  require(std::isfinite(cost), ErrorKind::FitFailure, "least squares: non-finite initial cost");

  double lambda = options.initial_damping;
  bool recompute = true;
  Eigen::MatrixXd jtj(p, p);
  Eigen::VectorXd grad(p);

  for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
    if (recompute) {
      jacobian_at(x, jac);
      jtj = jac.transpose() * jac;
      grad = jac.transpose() * r;
      recompute = false;
    }
    if (grad.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance * std::max(1.0, cost)) {
      result.converged = true;
      result.stop_reason = "gradient";
      break;
    }

    Eigen::MatrixXd damped = jtj;
    for (Eigen::Index j = 0; j < p; ++j) {
      damped(j, j) += lambda * std::max(jtj(j, j), 1e-300);
    }
    const Eigen::VectorXd step = damped.ldlt().solve(-grad);
    const Eigen::VectorXd trial = x + step;

    double trial_cost = std::numeric_limits<double>::infinity();
    if (step.allFinite() && feasible(trial)) {
      problem.residuals(trial, trial_r);
      trial_cost = squared_norm(trial_r);
    }

    if (std::isfinite(trial_cost) && trial_cost <= cost) {
      const double reduction = cost - trial_cost;
      const bool small_step =
          step.norm() <= options.step_tolerance * (x.norm() + options.step_tolerance);
      x = trial;
      r = trial_r;
      cost = trial_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      recompute = true;
      if (reduction <= options.relative_cost_tolerance * cost || small_step) {
        result.converged = true;
        result.stop_reason = small_step ? "step" : "cost";
        ++result.iterations;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e16) {
        // No descent direction left at working precision: a stationary point.
        result.converged = true;
        result.stop_reason = "damping";
        break;
      }
    }
  }
  if (!result.converged) result.stop_reason = "max_iterations";

  jacobian_at(x, jac);
  jtj = jac.transpose() * jac;
  result.params = x;
  result.sum_squares = cost;
  result.rms = std::sqrt(cost / static_cast<double>(n));

  const double dof = static_cast<double>(std::max<Eigen::Index>(n - p, 1));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jtj, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const bool singular = sv.size() == 0 || !(sv[sv.size() - 1] > sv[0] * 1e-14) || !(sv[0] > 0.0);
  if (singular) {
    result.covariance = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    result.covariance_valid = false;
  } else {
    const Eigen::MatrixXd inv =
        svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
    result.covariance = inv * (cost / dof);
    result.covariance_valid = true;
  }
  return result;
}

}  // namespace qbic::lsq
