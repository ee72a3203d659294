#include "atlas_istn/classifiers.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>

#include <gsl/gsl_integration.h>
#include <gsl/gsl_multimin.h>

#include "atlas_istn/error.hpp"
#include "atlas_istn/rng.hpp"

namespace atlas_istn::clf {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

std::array<int, 2> class_counts(const std::vector<int>& y) {
    std::array<int, 2> n{};
    for (int v : y) {
        if (v != 0 && v != 1) throw InvalidArgument("labels must be 0 or 1");
        ++n[v];
    }
    return n;
}

void check_inputs(const MatrixXd& x, const std::vector<int>& y, const char* who) {
    if (x.rows() != static_cast<Eigen::Index>(y.size())) throw InvalidArgument(std::string(who) + ": row/label count mismatch");
    if (!x.allFinite()) throw InvalidArgument(std::string(who) + ": non-finite feature values");
    const auto n = class_counts(y);
    if (n[0] == 0 || n[1] == 0) throw InvalidArgument(std::string(who) + ": both classes must be present (single-class input)");
}

}  // namespace

// ---------------------------------------------------------------- logistic

double logistic_objective(const MatrixXd& x, const std::vector<int>& y, const VectorXd& w, double b, double l2,
                          const std::array<double, 2>& cw) {
    const VectorXd z = (x * w).array() + b;
    double s = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) s += cw[y[i]] * (softplus(z(i)) - y[i] * z(i));
    return s / static_cast<double>(z.size()) + 0.5 * l2 * w.squaredNorm();
}

VectorXd LogisticModel::predict_proba(const MatrixXd& x) const {
    if (x.cols() != weights.size()) throw InvalidArgument("feature dimension mismatch");
    const VectorXd z = (x * weights).array() + bias;
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

LogisticModel fit_logistic(const MatrixXd& x, const std::vector<int>& y, const LogisticOptions& opt) {
    check_inputs(x, y, "fit_logistic");
    if (!(opt.l2 >= 0)) throw InvalidArgument("fit_logistic: l2 must be >= 0");
    const Eigen::Index n = x.rows(), d = x.cols();
    const auto counts = class_counts(y);
    LogisticModel m;
    m.l2 = opt.l2;
    if (opt.balanced) {
        m.class_weights = {double(n) / (2.0 * counts[0]), double(n) / (2.0 * counts[1])};
    }
    MatrixXd z(n, d + 1);
    z << x, VectorXd::Ones(n);
    VectorXd c(n), yv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        c(i) = m.class_weights[y[i]];
        yv(i) = y[i];
    }
    VectorXd theta = VectorXd::Zero(d + 1);
    VectorXd penalty = VectorXd::Constant(d + 1, opt.l2);
    penalty(d) = 0.0;

    auto objective = [&](const VectorXd& t) { return logistic_objective(x, y, t.head(d), t(d), opt.l2, m.class_weights); };
    double f = objective(theta);
    double gnorm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iterations; ++it) {
        const VectorXd p = (z * theta).unaryExpr([](double v) { return sigmoid(v); });
        const VectorXd g = z.transpose() * (c.array() * (p - yv).array()).matrix() / double(n) +
                           (penalty.array() * theta.array()).matrix();
        gnorm = g.norm();
        if (gnorm <= opt.gradient_tolerance) break;
        const VectorXd h_diag = c.array() * p.array() * (1.0 - p.array());
        MatrixXd h = z.transpose() * h_diag.asDiagonal() * z / double(n);
        h.diagonal() += penalty;
        h.diagonal().array() += 1e-12;
        const VectorXd step = -h.ldlt().solve(g);
        double t = 1.0;
        const double slope = g.dot(step);
        double f_new = objective(theta + step);
        while (f_new > f + 1e-4 * t * slope && t > 1e-12) {
            t *= 0.5;
            f_new = objective(theta + t * step);
        }
        if (t <= 1e-12) break;  // no further decrease representable
        theta += t * step;
        f = f_new;
    }
    if (!(gnorm <= opt.gradient_tolerance)) {
        // Re-evaluate at the final iterate before giving up.
        const VectorXd p = (z * theta).unaryExpr([](double v) { return sigmoid(v); });
        gnorm = (z.transpose() * (c.array() * (p - yv).array()).matrix() / double(n) +
                 (penalty.array() * theta.array()).matrix())
                    .norm();
        if (gnorm > std::max(opt.gradient_tolerance, 1e-6)) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "fit_logistic: Newton did not converge (gradient norm %.3g after %d iterations)",
                          gnorm, opt.max_iterations);
            throw NumericalError(buf);
        }
    }
    m.weights = theta.head(d);
    m.bias = theta(d);
    return m;
}

// ---------------------------------------------------------------------- GP

double rbf(const VectorXd& a, const VectorXd& b, double s2, double ell) {
    return s2 * std::exp(-0.5 * (a - b).squaredNorm() / (ell * ell));
}

MatrixXd rbf_matrix(const MatrixXd& a, const MatrixXd& b, double s2, double ell) {
    MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            k(i, j) = s2 * std::exp(-0.5 * (a.row(i) - b.row(j)).squaredNorm() / (ell * ell));
    return k;
}

namespace {

struct HermiteRule {
    std::vector<double> nodes, weights;
};

const HermiteRule& hermite_rule(int n) {
    static std::mutex mu;
    static std::map<int, HermiteRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    // Weight exp(-x^2) on (-inf, inf).
    gsl_integration_fixed_workspace* w = gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, n, 0.0, 1.0, 0.0, 0.0);
    if (w == nullptr) throw NumericalError("cannot build Gauss-Hermite rule");
    HermiteRule r;
    r.nodes.assign(gsl_integration_fixed_nodes(w), gsl_integration_fixed_nodes(w) + n);
    r.weights.assign(gsl_integration_fixed_weights(w), gsl_integration_fixed_weights(w) + n);
    gsl_integration_fixed_free(w);
    return cache.emplace(n, std::move(r)).first->second;
}

}  // namespace

double expected_sigmoid(double mean, double var, int nodes) {
    if (var <= 0) return sigmoid(mean);
    const auto& rule = hermite_rule(nodes);
    const double s = std::sqrt(2.0 * var);
    double acc = 0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * sigmoid(mean + s * rule.nodes[i]);
    return acc / std::sqrt(M_PI);
}

void GpModel::latent(const MatrixXd& x, VectorXd& mean, VectorXd& var) const {
    if (x.cols() != x_train.cols()) throw InvalidArgument("feature dimension mismatch");
    const MatrixXd ks = rbf_matrix(x_train, x, signal_variance, length_scale);  // [n, m]
    mean = ks.transpose() * grad_log_lik;
    const MatrixXd v = chol_b.triangularView<Eigen::Lower>().solve(sqrt_w.asDiagonal() * ks);
    var = (VectorXd::Constant(x.rows(), signal_variance) - v.colwise().squaredNorm().transpose()).cwiseMax(0.0);
}

VectorXd GpModel::predict_proba(const MatrixXd& x) const {
    VectorXd mean, var;
    latent(x, mean, var);
    VectorXd p(x.rows());
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = expected_sigmoid(mean(i), var(i), quadrature_nodes);
    return p;
}

GpModel laplace_posterior(const MatrixXd& x, const std::vector<int>& y, double s2, double ell, const GpOptions& opt) {
    if (!(s2 > 0 && ell > 0)) throw InvalidArgument("laplace_posterior: hyperparameters must be positive");
    if (x.rows() != static_cast<Eigen::Index>(y.size())) throw InvalidArgument("laplace_posterior: row/label mismatch");
    const Eigen::Index n = x.rows();
    GpModel m;
    m.x_train = x;
    m.signal_variance = s2;
    m.length_scale = ell;
    m.quadrature_nodes = opt.quadrature_nodes;
    m.y_pm.resize(n);
    VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        m.y_pm(i) = y[i] == 1 ? 1.0 : -1.0;
        t(i) = y[i];
    }
    MatrixXd k = rbf_matrix(x, x, s2, ell);
    k.diagonal().array() += kKernelJitter;

    auto log_lik = [&](const VectorXd& f) {
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s -= softplus(-m.y_pm(i) * f(i));
        return s;
    };
    struct Local {
        VectorXd grad, sw;
        Eigen::LLT<MatrixXd> llt;
    };
    auto linearise = [&](const VectorXd& f) {
        Local l;
        const VectorXd pi = f.unaryExpr([](double v) { return sigmoid(v); });
        l.grad = t - pi;
        l.sw = (pi.array() * (1.0 - pi.array())).sqrt();
        MatrixXd b = l.sw.asDiagonal() * k * l.sw.asDiagonal();
        b.diagonal().array() += 1.0;
        l.llt.compute(b);
        if (l.llt.info() != Eigen::Success) throw NumericalError("laplace_posterior: Cholesky of B failed");
        return l;
    };

    VectorXd a = VectorXd::Zero(n), f = VectorXd::Zero(n);
    double psi = log_lik(f);
    bool converged = false;
    int it = 0;
    double last_change = 0;
    for (; it < opt.newton_max_iterations; ++it) {
        const Local l = linearise(f);
        const VectorXd w = l.sw.array().square();
        const VectorXd b = w.cwiseProduct(f) + l.grad;
        const VectorXd rhs = l.sw.cwiseProduct(k * b);
        const VectorXd a_full = b - l.sw.cwiseProduct(l.llt.matrixU().solve(l.llt.matrixL().solve(rhs)));
        const VectorXd da = a_full - a;
        double step = 1.0, psi_new = 0;
        VectorXd a_new, f_new;
        for (int h = 0; h < 40; ++h) {
            a_new = a + step * da;
            f_new = k * a_new;
            psi_new = -0.5 * a_new.dot(f_new) + log_lik(f_new);
            if (psi_new >= psi - 1e-12 * std::abs(psi)) break;
            step *= 0.5;
        }
        last_change = psi_new - psi;
        a = a_new;
        f = f_new;
        const double prev = psi;
        psi = psi_new;
        if (std::abs(psi - prev) <= opt.newton_tolerance) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "laplace_posterior: Newton did not converge in %d iterations (last objective change %.3g, "
                      "signal variance %.4g, length scale %.4g)",
                      opt.newton_max_iterations, last_change, s2, ell);
        throw NumericalError(buf);
    }
    const Local l = linearise(f);
    m.f_hat = f;
    m.grad_log_lik = l.grad;
    m.sqrt_w = l.sw;
    m.chol_b = l.llt.matrixL();
    m.log_marginal = psi - m.chol_b.diagonal().array().log().sum();
    return m;
}

namespace {

struct HyperObjective {
    const MatrixXd* x;
    const std::vector<int>* y;
    const GpOptions* opt;
};

constexpr double kLogBound = 6.0;

double neg_log_marginal(const gsl_vector* v, void* params) {
    const auto* h = static_cast<const HyperObjective*>(params);
    const double ls2 = gsl_vector_get(v, 0), lell = gsl_vector_get(v, 1);
    if (std::abs(ls2) > kLogBound || std::abs(lell) > kLogBound) return 1e10;
    try {
        return -laplace_posterior(*h->x, *h->y, std::exp(ls2), std::exp(lell), *h->opt).log_marginal;
    } catch (const NumericalError&) {
        return 1e10;
    }
}

}  // namespace

GpModel fit_gp(const MatrixXd& x, const std::vector<int>& y, const GpOptions& opt) {
    check_inputs(x, y, "fit_gp");
    if (x.rows() < 2) throw InvalidArgument("fit_gp: need at least 2 samples");
    const double ell0 = opt.length_scale > 0 ? opt.length_scale : std::sqrt(double(x.cols()));
    const double s20 = opt.signal_variance;
    if (!opt.optimize_hyperparameters) return laplace_posterior(x, y, s20, ell0, opt);

    HyperObjective params{&x, &y, &opt};
    gsl_multimin_function fn{&neg_log_marginal, 2, &params};
    double best = std::numeric_limits<double>::infinity();
    double best_s2 = s20, best_ell = ell0;
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        double start[2] = {std::log(s20), std::log(ell0)};
        if (r > 0) {
            Rng rng(child_seed(opt.seed, "gp.restart", static_cast<std::uint64_t>(r)));
            start[0] += uniform(rng, -1.5, 1.5);
            start[1] += uniform(rng, -1.5, 1.5);
        }
        gsl_vector* x0 = gsl_vector_alloc(2);
        gsl_vector* step = gsl_vector_alloc(2);
        gsl_vector_set(x0, 0, start[0]);
        gsl_vector_set(x0, 1, start[1]);
        gsl_vector_set_all(step, 0.5);
        gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2);
        gsl_multimin_fminimizer_set(s, &fn, x0, step);
        for (int it = 0; it < 200; ++it) {
            if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
            if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-4) == GSL_SUCCESS) break;
        }
        const double val = gsl_multimin_fminimizer_minimum(s);
        if (val < best) {
            best = val;
            best_s2 = std::exp(gsl_vector_get(s->x, 0));
            best_ell = std::exp(gsl_vector_get(s->x, 1));
        }
        gsl_multimin_fminimizer_free(s);
        gsl_vector_free(step);
        gsl_vector_free(x0);
    }
    if (!std::isfinite(best) || best >= 1e10) throw NumericalError("fit_gp: no restart produced a valid Laplace fit");
    return laplace_posterior(x, y, best_s2, best_ell, opt);
}

// -------------------------------------------------------- fitted pipeline

std::string to_string(Kind k) { return k == Kind::Logistic ? "lr" : "gp"; }

Kind kind_from_string(const std::string& s) {
    if (s == "lr" || s == "logistic") return Kind::Logistic;
    if (s == "gp") return Kind::GP;
    throw InvalidArgument("unknown classifier '" + s + "' (expected lr or gp)");
}

VectorXd Classifier::predict_proba(const MatrixXd& raw) const {
    const MatrixXd z = standardizer.apply(raw);
    return kind == Kind::Logistic ? logistic.predict_proba(z) : gp.predict_proba(z);
}

Classifier fit_classifier(Kind kind, const MatrixXd& raw, const std::vector<int>& y, const ClassifierOptions& opt) {
    Classifier c;
    c.kind = kind;
    c.standardizer = features::Standardizer::fit(raw);
    const MatrixXd z = c.standardizer.apply(raw);
    if (kind == Kind::Logistic) c.logistic = fit_logistic(z, y, opt.logistic);
    else c.gp = fit_gp(z, y, opt.gp);
    return c;
}

namespace {

std::vector<double> vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json to_json(const Classifier& c) {
    json j{{"format_version", kModelFormatVersion}, {"kind", to_string(c.kind)}, {"standardizer", c.standardizer}};
    if (c.kind == Kind::Logistic) {
        j["logistic"] = {{"weights", vec(c.logistic.weights)},
                         {"bias", c.logistic.bias},
                         {"l2", c.logistic.l2},
                         {"class_weights", c.logistic.class_weights}};
    } else {
        std::vector<std::vector<double>> rows;
        for (Eigen::Index i = 0; i < c.gp.x_train.rows(); ++i) rows.push_back(vec(c.gp.x_train.row(i).transpose()));
        std::vector<int> labels;
        for (Eigen::Index i = 0; i < c.gp.y_pm.size(); ++i) labels.push_back(c.gp.y_pm(i) > 0 ? 1 : 0);
        j["gp"] = {{"kernel", "rbf"},
                   {"signal_variance", c.gp.signal_variance},
                   {"length_scale", c.gp.length_scale},
                   {"jitter", kKernelJitter},
                   {"quadrature_nodes", c.gp.quadrature_nodes},
                   {"log_marginal", c.gp.log_marginal},
                   {"x_train", rows},
                   {"labels", labels},
                   {"f_hat", vec(c.gp.f_hat)}};
    }
    return j;
}

Classifier classifier_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kModelFormatVersion) throw IoError("unsupported model format_version");
    Classifier c;
    c.kind = kind_from_string(j.at("kind").get<std::string>());
    c.standardizer = j.at("standardizer").get<features::Standardizer>();
    if (c.kind == Kind::Logistic) {
        const auto& l = j.at("logistic");
        c.logistic.weights = from_vec(l.at("weights").get<std::vector<double>>());
        c.logistic.bias = l.at("bias").get<double>();
        c.logistic.l2 = l.at("l2").get<double>();
        c.logistic.class_weights = l.at("class_weights").get<std::array<double, 2>>();
    } else {
        const auto& g = j.at("gp");
        const auto rows = g.at("x_train").get<std::vector<std::vector<double>>>();
        const auto labels = g.at("labels").get<std::vector<int>>();
        if (rows.empty() || rows.size() != labels.size()) throw IoError("gp model: inconsistent training data");
        MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = from_vec(rows[i]).transpose();
        GpOptions opt;
        opt.quadrature_nodes = g.at("quadrature_nodes").get<int>();
        // The posterior is a deterministic function of data and hyperparameters.
        c.gp = laplace_posterior(x, labels, g.at("signal_variance").get<double>(), g.at("length_scale").get<double>(), opt);
    }
    return c;
}

void save_classifier(const fs::path& path, const Classifier& c) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << to_json(c).dump(2) << '\n';
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

Classifier load_classifier(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model '" + path.string() + "'");
    try {
        return classifier_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw IoError("invalid model file '" + path.string() + "': " + e.what());
    }
}

void write_predictions_csv(const fs::path& path, const std::vector<std::string>& ids, const VectorXd& p,
                           double threshold) {
    if (static_cast<Eigen::Index>(ids.size()) != p.size()) throw InvalidArgument("predictions: id/probability mismatch");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << "id,probability,label\n";
    char buf[32];
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", p(static_cast<Eigen::Index>(i)));
        out << ids[i] << ',' << buf << ',' << (p(static_cast<Eigen::Index>(i)) >= threshold ? 1 : 0) << '\n';
    }
}

}  // namespace atlas_istn::clf
