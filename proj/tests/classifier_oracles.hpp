#pragma once

// Reference implementations used only by tests. The Laplace oracle solves the
// Newton system with dense LU factorisations of the textbook matrices and
// integrates the predictive probability on a fine grid, sharing no code with
// the library's Cholesky/quadrature path.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace atlas_istn::testing {

struct ReferenceLaplace {
    Eigen::MatrixXd x;
    Eigen::VectorXd f_hat, grad;
    Eigen::MatrixXd k_plus_winv_inv;
    double s2 = 1, ell = 1;

    double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        double d2 = 0;
        for (int i = 0; i < a.size(); ++i) d2 += (a(i) - b(i)) * (a(i) - b(i));
        return s2 * std::exp(-d2 / (2 * ell * ell));
    }

    ReferenceLaplace(const Eigen::MatrixXd& xs, const std::vector<int>& y, double signal_variance, double length_scale)
        : x(xs), s2(signal_variance), ell(length_scale) {
        const int n = static_cast<int>(x.rows());
        Eigen::MatrixXd k(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) k(i, j) = kernel(x.row(i), x.row(j)) + (i == j ? 1e-8 : 0.0);
        Eigen::VectorXd t(n);
        for (int i = 0; i < n; ++i) t(i) = y[i];
        Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd pi(n), w(n);
        for (int it = 0; it < 500; ++it) {
            for (int i = 0; i < n; ++i) {
                pi(i) = 1.0 / (1.0 + std::exp(-f(i)));
                w(i) = pi(i) * (1 - pi(i));
            }
            grad = t - pi;
            // f_new = (K^-1 + W)^-1 (W f + grad) = (I + K W)^-1 K (W f + grad)
            Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) + k * w.asDiagonal();
            Eigen::VectorXd f_new = a.fullPivLu().solve(k * (w.cwiseProduct(f) + grad));
            const double change = (f_new - f).cwiseAbs().maxCoeff();
            f = f_new;
            if (change < 1e-14) break;
        }
        for (int i = 0; i < n; ++i) {
            pi(i) = 1.0 / (1.0 + std::exp(-f(i)));
            w(i) = pi(i) * (1 - pi(i));
        }
        f_hat = f;
        grad = t - pi;
        Eigen::MatrixXd m = k;
        for (int i = 0; i < n; ++i) m(i, i) += 1.0 / w(i);
        k_plus_winv_inv = m.fullPivLu().inverse();
    }

    double predict(const Eigen::VectorXd& xs) const {
        const int n = static_cast<int>(x.rows());
        Eigen::VectorXd ks(n);
        for (int i = 0; i < n; ++i) ks(i) = kernel(x.row(i), xs);
        const double mean = ks.dot(grad);
        const double var = std::max(0.0, s2 - ks.dot(k_plus_winv_inv * ks));
        if (var < 1e-300) return 1.0 / (1.0 + std::exp(-mean));
        // Composite Simpson over mean +- 14 sd.
        const double sd = std::sqrt(var);
        const int m = 40000;
        const double lo = mean - 14 * sd, h = 28 * sd / m;
        double acc = 0;
        for (int i = 0; i <= m; ++i) {
            const double z = lo + i * h;
            const double g = std::exp(-0.5 * (z - mean) * (z - mean) / var) / (sd * std::sqrt(2 * M_PI));
            const double v = g / (1.0 + std::exp(-z));
            acc += (i == 0 || i == m ? 1 : (i % 2 ? 4 : 2)) * v;
        }
        return acc * h / 3;
    }
};

}  // namespace atlas_istn::testing
