#include "dbnmon/quadrature.hpp"

#include <cmath>
#include <stdexcept>

namespace dbnmon {
namespace {

void add_point(std::vector<Eigen::VectorXd>& pts, std::vector<double>& ws,
               const Eigen::VectorXd& p, double w) {
    pts.push_back(p);
    ws.push_back(w);
}

// +-r e_i for every axis.
void add_axis_orbit(std::vector<Eigen::VectorXd>& pts, std::vector<double>& ws,
                    int d, double r, double w) {
    for (int i = 0; i < d; ++i)
        for (int s : {1, -1}) {
            Eigen::VectorXd p = Eigen::VectorXd::Zero(d);
            p[i] = s * r;
            add_point(pts, ws, p, w);
        }
}

// (+-s, +-s) over all coordinate pairs.
void add_pair_orbit(std::vector<Eigen::VectorXd>& pts, std::vector<double>& ws,
                    int d, double s, double w) {
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            for (int si : {1, -1})
                for (int sj : {1, -1}) {
                    Eigen::VectorXd p = Eigen::VectorXd::Zero(d);
                    p[i] = si * s;
                    p[j] = sj * s;
                    add_point(pts, ws, p, w);
                }
}

// (+-t, +-t, +-t) over all coordinate triples.
void add_triple_orbit(std::vector<Eigen::VectorXd>& pts, std::vector<double>& ws,
                      int d, double t, double w) {
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            for (int k = j + 1; k < d; ++k)
                for (int si : {1, -1})
                    for (int sj : {1, -1})
                        for (int sk : {1, -1}) {
                            Eigen::VectorXd p = Eigen::VectorXd::Zero(d);
                            p[i] = si * t;
                            p[j] = sj * t;
                            p[k] = sk * t;
                            add_point(pts, ws, p, w);
                        }
}

CubatureRule assemble(int d, int precision, const std::vector<Eigen::VectorXd>& pts,
                      const std::vector<double>& ws) {
    CubatureRule rule;
    rule.dimension = d;
    rule.precision = precision;
    const int n = static_cast<int>(pts.size());
    rule.points.resize(n, d);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.points.row(i) = pts[i].transpose();
        rule.weights[i] = ws[i];
    }
    return rule;
}

CubatureRule build_precision3(int d, double kappa) {
    if (d + kappa <= 0.0)
        throw std::invalid_argument("build_rule: d + kappa must be positive");
    std::vector<Eigen::VectorXd> pts;
    std::vector<double> ws;
    add_point(pts, ws, Eigen::VectorXd::Zero(d), kappa / (d + kappa));
    add_axis_orbit(pts, ws, d, std::sqrt(d + kappa), 1.0 / (2.0 * (d + kappa)));
    return assemble(d, 3, pts, ws);
}

CubatureRule build_precision5(int d) {
    // Single generator sqrt(3) on axis and pair orbits; closed-form weights
    // from the degree-5 moment equations.
    const double r = std::sqrt(3.0);
    const double w_axis = (4.0 - d) / 18.0;
    const double w_pair = 1.0 / 36.0;
    std::vector<Eigen::VectorXd> pts;
    std::vector<double> ws;
    double w0 = 1.0 - 2.0 * d * w_axis - 2.0 * d * (d - 1) * w_pair;
    add_point(pts, ws, Eigen::VectorXd::Zero(d), w0);
    add_axis_orbit(pts, ws, d, r, w_axis);
    if (d >= 2) add_pair_orbit(pts, ws, d, r, w_pair);
    return assemble(d, 5, pts, ws);
}

CubatureRule build_precision7(int d) {
    if (d == 1) {
        // Five-point Gauss-Hermite (precision 9 >= 7); count matches
        // (4 d^3 + 8 d + 3)/3 = 5.
        Eigen::VectorXd nodes, weights;
        gauss_hermite(5, nodes, weights);
        std::vector<Eigen::VectorXd> pts;
        std::vector<double> ws;
        for (int i = 0; i < 5; ++i) {
            Eigen::VectorXd p(1);
            p[0] = nodes[i];
            add_point(pts, ws, p, weights[i]);
        }
        return assemble(1, 7, pts, ws);
    }

    // Generators u^2 = 2 (axis, pair, triple) and v^2 = 9 (axis, pair).
    // Orbit weights are determined by the even moment equations up to
    // degree 6; the remaining equations then hold identically.
    const double P = 2.0, Q = 9.0;
    const double u = std::sqrt(P), v = std::sqrt(Q);
    const bool has_triple = d >= 3;
    const int nw = has_triple ? 5 : 4;  // wa, wb, wAA, wBB [, wT]
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nw, nw);
    Eigen::VectorXd b(nw);
    int row = 0;
    // x^4
    A(row, 0) = 2 * P * P;
    A(row, 1) = 2 * Q * Q;
    A(row, 2) = 4 * (d - 1) * P * P;
    A(row, 3) = 4 * (d - 1) * Q * Q;
    if (has_triple) A(row, 4) = 4 * (d - 1) * (d - 2) * P * P;
    b[row++] = 3;
    // x^6
    A(row, 0) = 2 * P * P * P;
    A(row, 1) = 2 * Q * Q * Q;
    A(row, 2) = 4 * (d - 1) * P * P * P;
    A(row, 3) = 4 * (d - 1) * Q * Q * Q;
    if (has_triple) A(row, 4) = 4 * (d - 1) * (d - 2) * P * P * P;
    b[row++] = 15;
    // x^2 y^2
    A(row, 2) = 4 * P * P;
    A(row, 3) = 4 * Q * Q;
    if (has_triple) A(row, 4) = 8 * (d - 2) * P * P;
    b[row++] = 1;
    // x^4 y^2
    A(row, 2) = 4 * P * P * P;
    A(row, 3) = 4 * Q * Q * Q;
    if (has_triple) A(row, 4) = 8 * (d - 2) * P * P * P;
    b[row++] = 3;
    if (has_triple) {
        // x^2 y^2 z^2
        A(row, 4) = 8 * P * P * P;
        b[row++] = 1;
    }
    Eigen::VectorXd w = A.fullPivLu().solve(b);

    std::vector<Eigen::VectorXd> pts;
    std::vector<double> ws;
    double total = 2 * d * (w[0] + w[1]) + 2 * d * (d - 1) * (w[2] + w[3]);
    if (has_triple) total += 4.0 * d * (d - 1) * (d - 2) / 3.0 * w[4];
    add_point(pts, ws, Eigen::VectorXd::Zero(d), 1.0 - total);
    add_axis_orbit(pts, ws, d, u, w[0]);
    add_axis_orbit(pts, ws, d, v, w[1]);
    add_pair_orbit(pts, ws, d, u, w[2]);
    add_pair_orbit(pts, ws, d, v, w[3]);
    if (has_triple) add_triple_orbit(pts, ws, d, u, w[4]);
    return assemble(d, 7, pts, ws);
}

double standard_moment(int a) {
    switch (a) {
        case 0: return 1.0;
        case 2: return 1.0;
        case 4: return 3.0;
        case 6: return 15.0;
        default:
            if (a % 2 == 1) return 0.0;
            // double factorial (a-1)!!
            double m = 1.0;
            for (int k = a - 1; k > 1; k -= 2) m *= k;
            return m;
    }
}

void worst_error(const CubatureRule& rule, Eigen::VectorXi& expo, int coord,
                 int remaining, double& worst) {
    if (coord == rule.dimension) {
        double expect = 1.0;
        for (int i = 0; i < expo.size(); ++i) expect *= standard_moment(expo[i]);
        double est = 0.0;
        for (int j = 0; j < rule.count(); ++j) {
            double term = rule.weights[j];
            for (int i = 0; i < expo.size(); ++i)
                for (int k = 0; k < expo[i]; ++k) term *= rule.points(j, i);
            est += term;
        }
        worst = std::max(worst, std::abs(est - expect));
        return;
    }
    for (int a = 0; a <= remaining; ++a) {
        expo[coord] = a;
        worst_error(rule, expo, coord + 1, remaining - a, worst);
    }
    expo[coord] = 0;
}

}  // namespace

double max_monomial_error(const CubatureRule& rule) {
    Eigen::VectorXi expo = Eigen::VectorXi::Zero(rule.dimension);
    double worst = 0.0;
    worst_error(rule, expo, 0, rule.precision, worst);
    return worst;
}

CubatureRule build_rule(int precision, int d, double kappa) {
    if (d < 1) throw std::invalid_argument("build_rule: dimension must be positive");
    CubatureRule rule;
    switch (precision) {
        case 3:
            if (std::isnan(kappa)) kappa = 3.0 - d;
            rule = build_precision3(d, kappa);
            return rule;  // closed form; exactness covered by unit tests
        case 5:
            rule = build_precision5(d);
            break;
        case 7:
            rule = build_precision7(d);
            break;
        default:
            throw std::invalid_argument("build_rule: unsupported precision " +
                                        std::to_string(precision));
    }
    double err = max_monomial_error(rule);
    if (err > 1e-9)
        throw std::runtime_error("build_rule: moment-matching residual " +
                                 std::to_string(err) + " exceeds 1e-9");
    return rule;
}

Eigen::MatrixXd transform_points(const CubatureRule& rule, const Gaussian& g) {
    if (rule.dimension != g.dim())
        throw std::invalid_argument("transform_points: rule/Gaussian dimension mismatch");
    // Symmetric PSD square root: invariant to the variable ordering (a
    // Cholesky factor is not, and the induced point set differs) and exact
    // for singular covariances without jitter.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.cov());
    if (es.info() != Eigen::Success)
        throw std::runtime_error("transform_points: eigendecomposition failed");
    if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, es.eigenvalues().maxCoeff()))
        throw std::runtime_error("transform_points: covariance is indefinite");
    Eigen::MatrixXd L = es.eigenvectors() *
                        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                        es.eigenvectors().transpose();
    Eigen::MatrixXd out(rule.count(), rule.dimension);
    for (int j = 0; j < rule.count(); ++j)
        out.row(j) = (g.mean() + L * rule.points.row(j).transpose()).transpose();
    return out;
}

LocalMoments estimate_local_moments(
    const Gaussian& parents,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::MatrixXd& noise_cov, const CubatureRule& rule) {
    const Eigen::MatrixXd y = transform_points(rule, parents);
    const int n = rule.count();
    const int d = parents.dim();

    Eigen::VectorXd mean;
    Eigen::MatrixXd exx, exy;
    int m = -1;
    for (int j = 0; j < n; ++j) {
        Eigen::VectorXd x = f(y.row(j).transpose());
        if (!x.allFinite())
            throw std::runtime_error(
                "estimate_local_moments: non-finite function value at point " +
                std::to_string(j));
        if (m < 0) {
            m = static_cast<int>(x.size());
            mean = Eigen::VectorXd::Zero(m);
            exx = Eigen::MatrixXd::Zero(m, m);
            exy = Eigen::MatrixXd::Zero(m, d);
        }
        const double w = rule.weights[j];
        mean += w * x;
        exx += w * x * x.transpose();
        exy += w * x * y.row(j);
    }

    LocalMoments lm;
    lm.mean = mean;
    lm.cov = symmetrized(exx - mean * mean.transpose());
    if (noise_cov.size() > 0) lm.cov += noise_cov;
    lm.cross = exy - mean * parents.mean().transpose();
    lm.evals = n;
    return lm;
}

void gauss_hermite(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        double off = std::sqrt(static_cast<double>(k));
        J(k, k - 1) = off;
        J(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    nodes = es.eigenvalues();
    weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double v0 = es.eigenvectors()(0, i);
        weights[i] = v0 * v0;
    }
}

}  // namespace dbnmon
