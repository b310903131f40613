#include "snvkit/levenberg_marquardt.hpp"

#include <algorithm>
#include <cmath>

namespace snvkit::fit {

void numeric_jacobian(const ResidualFn& residuals, const Eigen::VectorXd& p, Eigen::Index m,
                      double rel_step, Eigen::MatrixXd& jac) {
  const Eigen::Index n = p.size();
  jac.resize(m, n);
  Eigen::VectorXd rp(m), rm(m);
  Eigen::VectorXd q = p;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = rel_step * std::max(std::abs(p[j]), 1e-3);
    q[j] = p[j] + h;
    residuals(q, rp);
    q[j] = p[j] - h;
    residuals(q, rm);
    q[j] = p[j];
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
}

LmResult levenberg_marquardt(const ResidualFn& residuals, Eigen::VectorXd p0, Eigen::Index m,
                             const LmOptions& options, const JacobianFn& jacobian,
                             const ProjectFn& project) {
  const Eigen::Index n = p0.size();
  if (project) project(p0);

  auto compute_jac = [&](const Eigen::VectorXd& p, Eigen::MatrixXd& jac) {
    if (jacobian) {
      jacobian(p, jac);
    } else {
      numeric_jacobian(residuals, p, m, options.diff_step, jac);
    }
  };

  LmResult out;
  Eigen::VectorXd p = std::move(p0);
  Eigen::VectorXd r(m);
  residuals(p, r);
  double cost = 0.5 * r.squaredNorm();

  Eigen::MatrixXd jac(m, n);
  double lambda = options.initial_damping;
  int it = 0;
  bool converged = cost == 0.0;

  Eigen::VectorXd r_trial(m);
  while (!converged && it < options.max_iterations) {
    ++it;
    compute_jac(p, jac);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;
    Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-12 * std::max(jtj.diagonal().maxCoeff(), 1e-300));

    bool accepted = false;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * diag;
      Eigen::VectorXd step = a.ldlt().solve(-grad);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Eigen::VectorXd trial = p + step;
      if (project) project(trial);
      residuals(trial, r_trial);
      const double trial_cost = 0.5 * r_trial.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const Eigen::VectorXd actual_step = trial - p;
        const double step_norm = actual_step.norm();
        p = std::move(trial);
        r = r_trial;
        const double prev_cost = cost;
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (step_norm <= options.step_tolerance * (p.norm() + options.step_tolerance) ||
            cost == 0.0 || prev_cost - cost <= options.cost_tolerance * std::max(prev_cost, 1e-300)) {
          converged = true;
        }
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: we sit at a (local) minimum.
      converged = grad.norm() <= 1e-6 * std::max(1.0, std::sqrt(2.0 * cost)) || lambda > 1e15;
      break;
    }
  }

  compute_jac(p, jac);
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  out.covariance = jtj.completeOrthogonalDecomposition().pseudoInverse();
  out.params = std::move(p);
  out.residuals = std::move(r);
  out.cost = cost;
  out.residual_variance = 2.0 * cost / static_cast<double>(std::max<Eigen::Index>(m - n, 1));
  out.iterations = it;
  out.converged = converged;
  return out;
}

}  // namespace snvkit::fit
