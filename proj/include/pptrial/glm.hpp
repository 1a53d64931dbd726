#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "pptrial/data.hpp"

namespace pptrial {

enum class Link { Logit, Identity };

struct DesignMatrix {
    Eigen::MatrixXd X;                 // n x p, first column is the intercept
    std::vector<std::string> labels;   // p column labels
    Eigen::VectorXd weights;           // n row weights; empty = unweighted

    static DesignMatrix with_intercept(Eigen::Index n);
    void add_column(const std::string& label, const Eigen::VectorXd& col);
    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }
};

struct FittedModel {
    Link link = Link::Logit;
    Eigen::VectorXd coefficients;
    std::vector<std::string> labels;
    bool converged = false;
    int iterations = 0;
    double deviance = 0.0; // residual sum of squares for the identity link
};

// IRLS for the logit link, closed-form weighted least squares for identity.
FittedModel fit_glm(const DesignMatrix& X, const Eigen::VectorXd& y, Link link);

Eigen::VectorXd predict(const FittedModel& model, const DesignMatrix& X);
Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& X);

double logit(double p);
double expit(double x);

// (mean1 - mean0) / pooled SD over baseline values of one covariate per arm.
double standardized_mean_difference(const LongitudinalDataset& ds, const std::string& covariate);

struct ImbalanceEntry {
    std::string covariate;
    double smd = 0.0;
    bool flagged = false;
};

std::vector<ImbalanceEntry> imbalance_report(const LongitudinalDataset& ds,
                                             const std::vector<std::string>& covariates,
                                             double threshold);

} // namespace pptrial
