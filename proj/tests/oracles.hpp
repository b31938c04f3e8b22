#pragma once

// Reference implementations used only by tests. They evaluate the defining
// formulas directly (plain products, no log space, no shared code with src/).

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

struct Obs {
    int label;        // 0-based hypothesis index
    double c;
};

/// Normalized masses over all K hypotheses, by direct product.
inline std::vector<double> product_posterior(const std::vector<Obs>& obs, int k) {
    std::vector<double> s(k, 1.0);
    for (int i = 0; i < k; ++i) {
        for (const auto& o : obs) {
            s[i] *= (o.label == i) ? o.c : (1.0 - o.c) / (k - 1);
        }
    }
    double z = 0.0;
    for (double v : s) z += v;
    for (double& v : s) v /= z;
    return s;
}

/// Weighted geometric mean over steps with weights 1/(2S) + u_s / (2 sum u).
inline double mars(const std::vector<std::vector<double>>& steps, const std::vector<double>& u) {
    const double S = static_cast<double>(steps.size());
    double usum = 0.0;
    for (double x : u) usum += x;
    double out = 1.0;
    for (std::size_t s = 0; s < steps.size(); ++s) {
        double prod = 1.0;
        for (double p : steps[s]) prod *= p;
        double q = std::pow(prod, 1.0 / static_cast<double>(steps[s].size()));
        double uh = usum > 0 ? u[s] / usum : 1.0 / S;
        out *= std::pow(q, 1.0 / (2.0 * S) + uh / 2.0);
    }
    return out;
}

/// (P1 - Pk) * log(C (K-1) / (1 - C)).
inline double drift_point(double p1, double pk, double c, int k) {
    return (p1 - pk) * std::log(c * (k - 1) / (1.0 - c));
}

/// All restricted-growth strings of length m using at most k blocks:
/// one representative per labeling up to renaming of candidates.
inline void labelings(int m, int k, std::vector<int>& cur, int used, std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == m) {
        out.push_back(cur);
        return;
    }
    for (int v = 0; v <= std::min(used, k - 1); ++v) {
        cur.push_back(v);
        labelings(m, k, cur, std::max(used, v + 1), out);
        cur.pop_back();
    }
}

inline std::vector<std::vector<int>> labelings(int m, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    labelings(m, k, cur, 0, out);
    return out;
}

} // namespace oracle
