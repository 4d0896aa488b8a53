#pragma once

// Small damped least-squares driver (Levenberg-Marquardt with Marquardt
// diagonal scaling). The caller supplies residuals and the analytic Jacobian.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>

namespace clocksim {

struct LmOptions {
    int max_iterations = 200;
    double relative_tolerance = 1e-10; // on the cost change of an accepted step
    double initial_lambda = 1e-3;
};

struct LmResult {
    Eigen::VectorXd params;
    double cost = 0.0; // 0.5 * sum r^2
    int iterations = 0;
    bool converged = false;
    Eigen::MatrixXd jtj; // at the solution
    Eigen::Index residual_count = 0;

    /// (J^T J)^-1 s^2 with s^2 = sum r^2 / (m - n).
    Eigen::MatrixXd covariance() const {
        const auto n = params.size();
        const double dof = static_cast<double>(residual_count - n);
        Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
        if (dof <= 0.0) return cov;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
        if (!lu.isInvertible()) return cov;
        return lu.inverse() * (2.0 * cost / dof);
    }
};

/// model(x, r, J) fills the residual vector r and Jacobian J = dr/dx.
using LmModel = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)>;

inline LmResult levenberg_marquardt(const LmModel& model, Eigen::VectorXd x, const LmOptions& opt = {}) {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    model(x, r, J);
    double cost = 0.5 * r.squaredNorm();
    double lambda = opt.initial_lambda;

    LmResult res;
    res.residual_count = r.size();
    if (!std::isfinite(cost)) {
        res.params = x;
        res.cost = cost;
        return res;
    }

    Eigen::VectorXd r_try;
    Eigen::MatrixXd J_try;
    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it + 1;
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        if (cost < 1e-300 || g.lpNorm<Eigen::Infinity>() == 0.0) {
            res.converged = true;
            break;
        }

        bool accepted = false;
        while (lambda < 1e16) {
            Eigen::MatrixXd M = A;
            for (Eigen::Index i = 0; i < M.rows(); ++i) M(i, i) += lambda * std::max(A(i, i), 1e-300);
            const Eigen::VectorXd step = M.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            const Eigen::VectorXd x_try = x + step;
            model(x_try, r_try, J_try);
            const double c_try = 0.5 * r_try.squaredNorm();
            if (std::isfinite(c_try) && c_try <= cost) {
                const double rel = (cost - c_try) / std::max(cost, 1e-300);
                x = x_try;
                r.swap(r_try);
                J.swap(J_try);
                cost = c_try;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (rel < opt.relative_tolerance) res.converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            // no downhill step at any damping: stationary to working precision
            res.converged = true;
            break;
        }
        if (res.converged) break;
    }
    res.params = x;
    res.cost = cost;
    res.jtj = J.transpose() * J;
    return res;
}

} // namespace clocksim
