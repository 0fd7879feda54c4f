#include "dbnmon/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace dbnmon {

Eigen::MatrixXd jittered(const Eigen::MatrixXd& m) {
    const int n = static_cast<int>(m.rows());
    if (n == 0) return m;
    double j = 1e-9 * m.trace() / n;
    if (j <= 0.0) j = 1e-12;
    return m + j * Eigen::MatrixXd::Identity(n, n);
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

Gaussian::Gaussian(std::vector<std::string> labels, Eigen::VectorXd mean,
                   Eigen::MatrixXd cov)
    : labels_(std::move(labels)), mean_(std::move(mean)), cov_(std::move(cov)) {
    const int n = static_cast<int>(labels_.size());
    if (mean_.size() != n || cov_.rows() != n || cov_.cols() != n)
        throw std::invalid_argument("Gaussian: dimension mismatch between labels, mean and cov");
    for (int i = 0; i < n; ++i) {
        auto [it, inserted] = index_.emplace(labels_[i], i);
        if (!inserted)
            throw std::invalid_argument("Gaussian: duplicate label '" + labels_[i] + "'");
    }
    if (n > 0) {
        double scale = cov_.cwiseAbs().maxCoeff();
        double asym = (cov_ - cov_.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12 * std::max(scale, 1.0))
            throw std::invalid_argument("Gaussian: covariance is not symmetric");
        cov_ = symmetrized(cov_);
    }
}

bool Gaussian::has(const std::string& label) const {
    return index_.count(label) > 0;
}

int Gaussian::index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end())
        throw std::invalid_argument("Gaussian: unknown label '" + label + "'");
    return it->second;
}

Gaussian Gaussian::marginalize(const std::vector<std::string>& keep) const {
    const int k = static_cast<int>(keep.size());
    Eigen::VectorXi idx(k);
    for (int i = 0; i < k; ++i) idx[i] = index_of(keep[i]);
    Eigen::VectorXd mu(k);
    Eigen::MatrixXd sig(k, k);
    for (int i = 0; i < k; ++i) {
        mu[i] = mean_[idx[i]];
        for (int j = 0; j < k; ++j) sig(i, j) = cov_(idx[i], idx[j]);
    }
    return Gaussian(keep, mu, symmetrized(sig));
}

Gaussian::Conditioned Gaussian::condition(const std::map<std::string, double>& obs) const {
    if (obs.empty()) return {*this, 0.0};

    std::vector<std::string> obs_labels, rest;
    for (const auto& [name, value] : obs) {
        (void)value;
        index_of(name);  // throws on unknown label
        obs_labels.push_back(name);
    }
    std::set<std::string> obs_set(obs_labels.begin(), obs_labels.end());
    for (const auto& l : labels_)
        if (!obs_set.count(l)) rest.push_back(l);

    const int a = static_cast<int>(rest.size());
    const int b = static_cast<int>(obs_labels.size());
    Eigen::VectorXd mu_a(a), mu_b(b), e(b);
    Eigen::MatrixXd s_aa(a, a), s_ab(a, b), s_bb(b, b);
    for (int i = 0; i < a; ++i) {
        int ii = index_of(rest[i]);
        mu_a[i] = mean_[ii];
        for (int j = 0; j < a; ++j) s_aa(i, j) = cov_(ii, index_of(rest[j]));
        for (int j = 0; j < b; ++j) s_ab(i, j) = cov_(ii, index_of(obs_labels[j]));
    }
    for (int i = 0; i < b; ++i) {
        int ii = index_of(obs_labels[i]);
        mu_b[i] = mean_[ii];
        e[i] = obs.at(obs_labels[i]);
        for (int j = 0; j < b; ++j) s_bb(i, j) = cov_(ii, index_of(obs_labels[j]));
    }

    Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(s_bb));
    if (llt.info() != Eigen::Success) {
        llt.compute(jittered(symmetrized(s_bb)));
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("Gaussian::condition: observed block is singular");
    }

    Eigen::VectorXd r = e - mu_b;
    Eigen::VectorXd alpha = llt.solve(r);
    double logdet = 0.0;
    for (int i = 0; i < b; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    double ll = -0.5 * (b * std::log(2.0 * std::numbers::pi) + logdet + r.dot(alpha));

    Eigen::VectorXd mu_post = mu_a + s_ab * alpha;
    Eigen::MatrixXd sig_post = symmetrized(s_aa - s_ab * llt.solve(s_ab.transpose()));
    return {Gaussian(rest, mu_post, sig_post), ll};
}

Gaussian Gaussian::extend_linear(const std::string& child,
                                 const std::vector<std::pair<std::string, double>>& weights,
                                 double intercept, double noise_var) const {
    if (noise_var < 0.0)
        throw std::invalid_argument("extend_linear: negative noise variance for '" + child + "'");
    if (has(child))
        throw std::invalid_argument("extend_linear: label '" + child + "' already present");
    const int n = dim();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (const auto& [name, coeff] : weights) w[index_of(name)] += coeff;

    Eigen::VectorXd sw = cov_ * w;
    double child_mean = w.dot(mean_) + intercept;
    double child_var = w.dot(sw) + noise_var;

    std::vector<std::string> new_labels = labels_;
    new_labels.push_back(child);
    Eigen::VectorXd mu(n + 1);
    mu.head(n) = mean_;
    mu[n] = child_mean;
    Eigen::MatrixXd sig(n + 1, n + 1);
    sig.topLeftCorner(n, n) = cov_;
    sig.block(0, n, n, 1) = sw;
    sig.block(n, 0, 1, n) = sw.transpose();
    sig(n, n) = child_var;
    return Gaussian(new_labels, mu, symmetrized(sig));
}

Gaussian Gaussian::append_conditional(const Gaussian& local) const {
    std::vector<std::string> parents, children;
    for (const auto& l : local.labels())
        (has(l) ? parents : children).push_back(l);
    const int p = static_cast<int>(parents.size());
    const int c = static_cast<int>(children.size());
    if (c == 0) return *this;

    // Blocks of the local joint in (parents, children) order.
    Eigen::VectorXd mu_p(p), mu_c(c);
    Eigen::MatrixXd s_pp(p, p), s_cp(c, p), s_cc(c, c);
    for (int i = 0; i < p; ++i) {
        int ii = local.index_of(parents[i]);
        mu_p[i] = local.mean()[ii];
        for (int j = 0; j < p; ++j) s_pp(i, j) = local.cov()(ii, local.index_of(parents[j]));
    }
    for (int i = 0; i < c; ++i) {
        int ii = local.index_of(children[i]);
        mu_c[i] = local.mean()[ii];
        for (int j = 0; j < p; ++j) s_cp(i, j) = local.cov()(ii, local.index_of(parents[j]));
        for (int j = 0; j < c; ++j) s_cc(i, j) = local.cov()(ii, local.index_of(children[j]));
    }

    // Regression coefficients B = S_cp S_pp^-1, intercept, conditional covariance.
    Eigen::MatrixXd B(c, p);
    if (p > 0) {
        Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(s_pp));
        if (llt.info() != Eigen::Success) {
            llt.compute(jittered(symmetrized(s_pp)));
            if (llt.info() != Eigen::Success)
                throw std::runtime_error("append_conditional: parent block is singular");
        }
        B = llt.solve(s_cp.transpose()).transpose();
    }
    Eigen::VectorXd b0 = mu_c - (p > 0 ? Eigen::VectorXd(B * mu_p) : Eigen::VectorXd::Zero(c));
    Eigen::MatrixXd cond_cov = symmetrized(s_cc - (p > 0 ? Eigen::MatrixXd(B * s_cp.transpose())
                                                         : Eigen::MatrixXd::Zero(c, c)));

    // Extend this Gaussian: children = B * parents + b0 + V, V ~ N(0, cond_cov).
    const int n = dim();
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(c, n);  // weights over our full label set
    for (int j = 0; j < p; ++j) W.col(index_of(parents[j])) = B.col(j);

    Eigen::MatrixXd cross = cov_ * W.transpose();  // n x c
    Eigen::VectorXd child_mean = W * mean_ + b0;
    Eigen::MatrixXd child_cov = W * cross + cond_cov;

    std::vector<std::string> new_labels = labels_;
    for (const auto& ch : children) new_labels.push_back(ch);
    Eigen::VectorXd mu(n + c);
    mu.head(n) = mean_;
    mu.tail(c) = child_mean;
    Eigen::MatrixXd sig(n + c, n + c);
    sig.topLeftCorner(n, n) = cov_;
    sig.topRightCorner(n, c) = cross;
    sig.bottomLeftCorner(c, n) = cross.transpose();
    sig.bottomRightCorner(c, c) = child_cov;
    return Gaussian(new_labels, mu, symmetrized(sig));
}

}  // namespace dbnmon
