#pragma once

#include <Eigen/Dense>

#include <functional>

namespace snvkit::fit {

/// Residual callback: fills r (size m) for parameters p.
using ResidualFn = std::function<void(const Eigen::VectorXd& p, Eigen::VectorXd& r)>;
/// Optional analytic Jacobian dr/dp (m x n).
using JacobianFn = std::function<void(const Eigen::VectorXd& p, Eigen::MatrixXd& jac)>;
/// Optional projection onto the feasible set, applied after every trial step.
using ProjectFn = std::function<void(Eigen::VectorXd& p)>;

struct LmOptions {
  int max_iterations = 200;
  /// Converged when ||step|| <= step_tolerance * (||p|| + step_tolerance).
  double step_tolerance = 1e-8;
  /// Also converged when an accepted step lowers the cost by less than this fraction.
  double cost_tolerance = 1e-12;
  double initial_damping = 1e-3;
  /// Relative finite-difference step for the numeric Jacobian.
  double diff_step = 1e-6;
};

struct LmResult {
  Eigen::VectorXd params;
  /// (J^T J)^+ at the solution; multiply by residual_variance for the usual
  /// scaled covariance when residuals are not already sigma-normalized.
  Eigen::MatrixXd covariance;
  Eigen::VectorXd residuals;
  double cost = 0.0;               ///< 0.5 * ||r||^2
  double residual_variance = 0.0;  ///< ||r||^2 / max(m - n, 1)
  int iterations = 0;
  bool converged = false;
};

/// Damped Gauss-Newton (Levenberg-Marquardt with Marquardt diagonal scaling).
LmResult levenberg_marquardt(const ResidualFn& residuals, Eigen::VectorXd p0, Eigen::Index m,
                             const LmOptions& options = {}, const JacobianFn& jacobian = {},
                             const ProjectFn& project = {});

/// Central-difference Jacobian of `residuals` at p.
void numeric_jacobian(const ResidualFn& residuals, const Eigen::VectorXd& p, Eigen::Index m,
                      double rel_step, Eigen::MatrixXd& jac);

}  // namespace snvkit::fit
