#include "pptrial/glm.hpp"
#include "pptrial/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace pptrial {

double logit(double p) { return std::log(p / (1.0 - p)); }
double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

DesignMatrix DesignMatrix::with_intercept(Eigen::Index n) {
    DesignMatrix d;
    d.X = Eigen::MatrixXd::Ones(n, 1);
    d.labels = {"(intercept)"};
    return d;
}

void DesignMatrix::add_column(const std::string& label, const Eigen::VectorXd& col) {
    if (col.size() != X.rows()) throw ModelError("column length mismatch: " + label);
    X.conservativeResize(Eigen::NoChange, X.cols() + 1);
    X.col(X.cols() - 1) = col;
    labels.push_back(label);
}

namespace {

constexpr double kScoreTol = 1e-8;
constexpr double kDevianceTol = 1e-10;
constexpr int kMaxIter = 100;
constexpr double kSeparationNorm = 1e3;

void check_rank(const Eigen::MatrixXd& Xw, const std::vector<std::string>& labels) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    if (qr.rank() < Xw.cols()) {
        // pivots past the rank point name the dependent columns
        std::ostringstream os;
        os << "rank-deficient design (rank " << qr.rank() << " of " << Xw.cols()
           << "); dependent columns:";
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index i = qr.rank(); i < Xw.cols(); ++i) os << ' ' << labels[perm[i]];
        throw RankDeficientError(os.str());
    }
}

Eigen::VectorXd row_weights(const DesignMatrix& d) {
    if (d.weights.size() == 0) return Eigen::VectorXd::Ones(d.n());
    if (d.weights.size() != d.n()) throw ModelError("row weight length mismatch");
    for (Eigen::Index i = 0; i < d.weights.size(); ++i)
        if (!(d.weights[i] >= 0.0) || !std::isfinite(d.weights[i]))
            throw ModelError("row weights must be finite and non-negative");
    return d.weights;
}

FittedModel fit_wls(const DesignMatrix& d, const Eigen::VectorXd& y) {
    Eigen::VectorXd w = row_weights(d);
    Eigen::VectorXd sw = w.array().sqrt();
    Eigen::MatrixXd Xw = sw.asDiagonal() * d.X;
    Eigen::VectorXd yw = sw.asDiagonal() * y;
    check_rank(Xw, d.labels);
    FittedModel m;
    m.link = Link::Identity;
    m.labels = d.labels;
    m.coefficients = Xw.colPivHouseholderQr().solve(yw);
    m.converged = true;
    m.iterations = 1;
    m.deviance = (yw - Xw * m.coefficients).squaredNorm();
    return m;
}

FittedModel fit_logit_irls(const DesignMatrix& d, const Eigen::VectorXd& y) {
    const Eigen::Index n = d.n(), p = d.p();
    Eigen::VectorXd w = row_weights(d);
    for (Eigen::Index i = 0; i < n; ++i)
        if (y[i] != 0.0 && y[i] != 1.0)
            throw ModelError("logit response must be 0/1");

    {
        Eigen::MatrixXd Xw = w.array().sqrt().matrix().asDiagonal() * d.X;
        check_rank(Xw, d.labels);
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double last_dev = std::numeric_limits<double>::infinity();
    FittedModel m;
    m.link = Link::Logit;
    m.labels = d.labels;

    for (int iter = 1; iter <= kMaxIter; ++iter) {
        Eigen::VectorXd eta = d.X * beta;
        Eigen::VectorXd mu = eta.unaryExpr([](double e) { return expit(e); });
        Eigen::VectorXd irls_w =
            (w.array() * mu.array() * (1.0 - mu.array())).cwiseMax(1e-12);
        Eigen::VectorXd z = eta.array() + (y - mu).array() / (mu.array() * (1.0 - mu.array())).max(1e-12);

        Eigen::MatrixXd XtWX = d.X.transpose() * irls_w.asDiagonal() * d.X;
        Eigen::VectorXd XtWz = d.X.transpose() * (irls_w.asDiagonal() * z);
        beta = XtWX.ldlt().solve(XtWz);

        if (beta.norm() > kSeparationNorm)
            throw SeparationError(
                "logistic fit diverged (coefficient norm > 1e3): response is separable");

        eta = d.X * beta;
        mu = eta.unaryExpr([](double e) { return expit(e); });
        double dev = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double mi = std::min(std::max(mu[i], 1e-15), 1.0 - 1e-15);
            dev -= 2.0 * w[i] * (y[i] * std::log(mi) + (1.0 - y[i]) * std::log(1.0 - mi));
        }
        Eigen::VectorXd score = d.X.transpose() * (w.array() * (y - mu).array()).matrix();
        m.iterations = iter;
        m.deviance = dev;
        double rel = std::abs(last_dev - dev) / (std::abs(dev) + 1e-300);
        if (score.cwiseAbs().maxCoeff() < kScoreTol || rel < kDevianceTol) {
            m.converged = true;
            break;
        }
        last_dev = dev;
    }
    // a (near-)zero deviance means every observation is classified perfectly,
    // which only happens under separation
    if (m.deviance < 1e-6)
        throw SeparationError(
            "fitted probabilities numerically 0 or 1: response is separable");
    m.coefficients = beta;
    return m;
}

} // namespace

FittedModel fit_glm(const DesignMatrix& X, const Eigen::VectorXd& y, Link link) {
    if (y.size() != X.n()) throw ModelError("response length mismatch");
    if (X.n() < X.p()) throw ModelError("fewer rows than columns in design");
    return link == Link::Identity ? fit_wls(X, y) : fit_logit_irls(X, y);
}

Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.coefficients.size())
        throw ModelError("prediction design has wrong column count");
    Eigen::VectorXd eta = X * model.coefficients;
    if (model.link == Link::Identity) return eta;
    return eta.unaryExpr([](double e) { return expit(e); });
}

Eigen::VectorXd predict(const FittedModel& model, const DesignMatrix& X) {
    if (X.labels != model.labels) throw ModelError("prediction design labels do not match model");
    return predict(model, X.X);
}

namespace {

struct ArmStats {
    double n = 0, sum = 0, sumsq = 0;
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double var() const { return n > 1 ? (sumsq - sum * sum / n) / (n - 1) : 0.0; }
};

} // namespace

double standardized_mean_difference(const LongitudinalDataset& ds, const std::string& covariate) {
    int idx = ds.schema.index(covariate);
    ArmStats g[2];
    for (const auto& s : ds.subjects) {
        auto v = s.visits.front().covariates[idx];
        if (!v) continue;
        ArmStats& a = g[s.arm == 1 ? 1 : 0];
        a.n += 1;
        a.sum += *v;
        a.sumsq += *v * *v;
    }
    double pooled = std::sqrt((g[0].var() + g[1].var()) / 2.0);
    double diff = g[1].mean() - g[0].mean();
    if (pooled == 0.0) {
        if (diff == 0.0) return 0.0;
        throw ModelError("infinite imbalance: zero pooled SD with unequal means for " + covariate);
    }
    return diff / pooled;
}

std::vector<ImbalanceEntry> imbalance_report(const LongitudinalDataset& ds,
                                             const std::vector<std::string>& covariates,
                                             double threshold) {
    if (!(threshold > 0.0)) throw ConfigError("threshold must be positive");
    std::vector<ImbalanceEntry> out;
    auto listed = [&](const std::string& name) {
        for (const auto& c : covariates)
            if (c == name) return true;
        return false;
    };
    // pre-specified covariates always reported; others only when they exceed
    // the threshold
    for (const auto& c : covariates) {
        double smd = standardized_mean_difference(ds, c);
        out.push_back({c, smd, std::abs(smd) >= threshold});
    }
    for (const auto& def : ds.schema.defs) {
        if (!def.baseline || listed(def.name)) continue;
        double smd = standardized_mean_difference(ds, def.name);
        if (std::abs(smd) >= threshold) out.push_back({def.name, smd, true});
    }
    return out;
}

} // namespace pptrial
