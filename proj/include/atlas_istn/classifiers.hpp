#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "atlas_istn/features.hpp"

namespace atlas_istn::clf {

inline constexpr int kModelFormatVersion = 1;

// ---------------------------------------------------------------- logistic

struct LogisticOptions {
    double l2 = 1e-3;
    bool balanced = true;
    double gradient_tolerance = 1e-8;
    int max_iterations = 200;
};

// Minimises (1/n) sum_i c_i * nll_i(w, b) + (l2 / 2) ||w||^2, where c_i is the
// balanced class weight n / (2 n_{y_i}) (1 when unbalanced). The bias is not
// penalised.
struct LogisticModel {
    Eigen::VectorXd weights;
    double bias = 0.0;
    double l2 = 0.0;
    std::array<double, 2> class_weights{1.0, 1.0};

    Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const;
};

LogisticModel fit_logistic(const Eigen::MatrixXd& x, const std::vector<int>& y, const LogisticOptions& opt = {});

// Objective value of the fit above for arbitrary parameters.
double logistic_objective(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::VectorXd& w, double b,
                          double l2, const std::array<double, 2>& class_weights);

// ---------------------------------------------------------------------- GP

struct GpOptions {
    bool optimize_hyperparameters = true;
    double signal_variance = 1.0;  // initial value, or the fixed one
    double length_scale = -1.0;    // <= 0 means sqrt(dim)
    int restarts = 3;
    std::uint64_t seed = 0;
    double newton_tolerance = 1e-9;  // change in the Laplace objective
    int newton_max_iterations = 100;
    int quadrature_nodes = 64;
};

// Binary GP classifier, logistic likelihood, Laplace approximation. Labels are
// 0/1 at the interface and +-1 inside.
struct GpModel {
    Eigen::MatrixXd x_train;
    Eigen::VectorXd y_pm;        // +-1
    double signal_variance = 1.0;
    double length_scale = 1.0;
    Eigen::VectorXd f_hat;       // posterior mode
    Eigen::VectorXd grad_log_lik;
    Eigen::VectorXd sqrt_w;
    Eigen::MatrixXd chol_b;      // lower Cholesky factor of I + W^1/2 K W^1/2
    double log_marginal = 0.0;
    int quadrature_nodes = 64;

    Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const;
    // Latent predictive mean and variance at x.
    void latent(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::VectorXd& var) const;
};

double rbf(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double signal_variance, double length_scale);
Eigen::MatrixXd rbf_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double signal_variance,
                           double length_scale);
inline constexpr double kKernelJitter = 1e-8;

// Laplace posterior at fixed hyperparameters (mode by damped Newton).
GpModel laplace_posterior(const Eigen::MatrixXd& x, const std::vector<int>& y, double signal_variance,
                          double length_scale, const GpOptions& opt = {});

GpModel fit_gp(const Eigen::MatrixXd& x, const std::vector<int>& y, const GpOptions& opt = {});

// E[sigmoid(z)] for z ~ N(mean, var) by Gauss-Hermite quadrature.
double expected_sigmoid(double mean, double var, int nodes = 64);

// -------------------------------------------------------- fitted pipeline

enum class Kind { Logistic, GP };
std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);

// Standardisation (from training rows) followed by one of the two models.
struct Classifier {
    Kind kind = Kind::Logistic;
    features::Standardizer standardizer;
    LogisticModel logistic;
    GpModel gp;

    Eigen::VectorXd predict_proba(const Eigen::MatrixXd& raw_features) const;
};

struct ClassifierOptions {
    LogisticOptions logistic;
    GpOptions gp;
};

Classifier fit_classifier(Kind kind, const Eigen::MatrixXd& raw_features, const std::vector<int>& y,
                          const ClassifierOptions& opt = {});

nlohmann::json to_json(const Classifier& c);
Classifier classifier_from_json(const nlohmann::json& j);
void save_classifier(const std::filesystem::path& path, const Classifier& c);
Classifier load_classifier(const std::filesystem::path& path);

// CSV columns: id, probability, label (probability >= threshold).
void write_predictions_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                           const Eigen::VectorXd& probabilities, double threshold = 0.5);

}  // namespace atlas_istn::clf
