// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CCLOC_METRICS_HPP
#define CCLOC_METRICS_HPP

// Neighborhood-preservation metrics (continuity, trustworthiness) and
// localization error statistics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccloc/error.hpp"

namespace ccloc::metrics {

using Points = std::vector<std::vector<double>>;

// r[a][b]: rank of b among a's neighbors (1 = nearest); r[a][a] = 0.
struct NeighborRanks {
    int n = 0;
    std::vector<int> r;  // row-major n x n

    int operator()(int a, int b) const { return r[static_cast<std::size_t>(a) * n + b]; }
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

inline void check_points(const Points& p)
{
    if (p.size() < 2)
        throw std::invalid_argument("rank_neighbors: need at least 2 points");
    for (const auto& q : p)
        if (q.size() != p.front().size() || q.empty())
            throw std::invalid_argument("rank_neighbors: points must share a positive dimension");
}

// Ascending Euclidean distance; ties broken by ascending point index.
inline NeighborRanks rank_neighbors(const Points& p)
{
    check_points(p);
    const int n = static_cast<int>(p.size());
    NeighborRanks nr;
    nr.n = n;
    nr.r.assign(static_cast<std::size_t>(n) * n, 0);
    std::vector<int> order;
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b)
            d[b] = squared_distance(p[a], p[b]);
        order.clear();
        for (int b = 0; b < n; ++b)
            if (b != a)
                order.push_back(b);
        std::sort(order.begin(), order.end(), [&](int x, int y) { return d[x] != d[y] ? d[x] < d[y] : x < y; });
        for (int k = 0; k < n - 1; ++k)
            nr.r[static_cast<std::size_t>(a) * n + order[k]] = k + 1;
    }
    return nr;
}

inline void check_k(int n, int k)
{
    if (k < 1 || 2 * n - 3 * k - 1 <= 0)
        throw std::invalid_argument("K = " + std::to_string(k) + " out of range for n = " + std::to_string(n) +
                                    " (need 1 <= K and 2n - 3K - 1 > 0)");
}

inline int max_valid_k(int n)
{
    int k = 0;
    while (2 * n - 3 * (k + 1) - 1 > 0)
        ++k;
    return k;
}

namespace detail {
// sum over (a, b) with rank_in(a,b) <= K < rank_out(a,b) of (rank_out - K)
inline double penalty(const NeighborRanks& in, const NeighborRanks& out, int k)
{
    const int n = in.n;
    double s = 0.0;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            if (a == b)
                continue;
            const int ri = in(a, b), ro = out(a, b);
            if (ri <= k && ro > k)
                s += ro - k;
        }
    return s;
}
inline double normalize(double pen, int n, int k)
{
    return 1.0 - 2.0 / (static_cast<double>(n) * k * (2.0 * n - 3.0 * k - 1.0)) * pen;
}
} // namespace detail

// True neighbors missing from the latent neighborhood, penalized by latent rank.
inline double continuity(const NeighborRanks& rv, const NeighborRanks& rf, int k)
{
    if (rv.n != rf.n)
        throw std::invalid_argument("continuity: point counts differ");
    check_k(rv.n, k);
    return detail::normalize(detail::penalty(rv, rf, k), rv.n, k);
}

// Latent neighbors that are not true neighbors, penalized by true rank.
inline double trustworthiness(const NeighborRanks& rv, const NeighborRanks& rf, int k)
{
    if (rv.n != rf.n)
        throw std::invalid_argument("trustworthiness: point counts differ");
    check_k(rv.n, k);
    return detail::normalize(detail::penalty(rf, rv, k), rv.n, k);
}

inline double continuity(const Points& truth, const Points& latent, int k)
{
    if (truth.size() != latent.size())
        throw std::invalid_argument("continuity: point counts differ");
    return continuity(rank_neighbors(truth), rank_neighbors(latent), k);
}

inline double trustworthiness(const Points& truth, const Points& latent, int k)
{
    if (truth.size() != latent.size())
        throw std::invalid_argument("trustworthiness: point counts differ");
    return trustworthiness(rank_neighbors(truth), rank_neighbors(latent), k);
}

struct CurvePoint {
    int k = 0;
    double ct = 0.0;
    double tw = 0.0;
};

// CT and TW for K = 1..min(k_max, largest valid K).
inline std::vector<CurvePoint> ct_tw_curve(const Points& truth, const Points& latent, int k_max)
{
    if (truth.size() != latent.size())
        throw std::invalid_argument("ct_tw_curve: point counts differ");
    const auto rv = rank_neighbors(truth);
    const auto rf = rank_neighbors(latent);
    const int kk = std::min(k_max, max_valid_k(rv.n));
    std::vector<CurvePoint> out;
    for (int k = 1; k <= kk; ++k)
        out.push_back({k, continuity(rv, rf, k), trustworthiness(rv, rf, k)});
    return out;
}

struct ErrorStats {
    std::vector<double> errors;                          // sorted ascending
    std::vector<std::pair<double, double>> cdf;          // (error, i/n)
    double mean = 0.0;
    double median = 0.0;
    double p90 = 0.0;
    double frac_below_2m = 0.0;
};

// Linear interpolation between order statistics at position q (n - 1).
inline double quantile_sorted(const std::vector<double>& s, double q)
{
    if (s.empty())
        throw std::invalid_argument("quantile: empty sample");
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline ErrorStats error_cdf(const Points& pred, const Points& truth)
{
    if (pred.size() != truth.size())
        throw std::invalid_argument("error_cdf: prediction and truth counts differ");
    if (pred.empty())
        throw std::invalid_argument("error_cdf: need at least one sample");
    ErrorStats st;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != truth[i].size())
            throw std::invalid_argument("error_cdf: dimension mismatch at row " + std::to_string(i));
        st.errors.push_back(std::sqrt(squared_distance(pred[i], truth[i])));
    }
    std::sort(st.errors.begin(), st.errors.end());
    const double n = static_cast<double>(st.errors.size());
    for (std::size_t i = 0; i < st.errors.size(); ++i)
        st.cdf.emplace_back(st.errors[i], static_cast<double>(i + 1) / n);
    st.mean = std::accumulate(st.errors.begin(), st.errors.end(), 0.0) / n;
    st.median = quantile_sorted(st.errors, 0.5);
    st.p90 = quantile_sorted(st.errors, 0.9);
    st.frac_below_2m =
        static_cast<double>(std::count_if(st.errors.begin(), st.errors.end(), [](double e) { return e < 2.0; })) / n;
    return st;
}

struct ChartReport {
    std::vector<CurvePoint> curve;
    ErrorStats errors;
    bool has_errors = false;
};

inline nlohmann::json to_json(const ChartReport& r)
{
    nlohmann::json j;
    nlohmann::json ks = nlohmann::json::array(), ct = nlohmann::json::array(), tw = nlohmann::json::array();
    for (const auto& c : r.curve) {
        ks.push_back(c.k);
        ct.push_back(c.ct);
        tw.push_back(c.tw);
    }
    j["ct_tw"] = {{"k", ks}, {"ct", ct}, {"tw", tw}};
    if (r.has_errors)
        j["error"] = {{"n", r.errors.errors.size()},
                      {"mean", r.errors.mean},
                      {"median", r.errors.median},
                      {"p90", r.errors.p90},
                      {"p_below_2m", r.errors.frac_below_2m}};
    return j;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve, const std::string& stamp)
{
    std::ostringstream out;
    out.precision(17);
    out << "# config_hash=" << stamp << "\nK,CT,TW\n";
    for (const auto& c : curve)
        out << c.k << ',' << c.ct << ',' << c.tw << '\n';
    return out.str();
}

inline std::string cdf_csv(const ErrorStats& e, const std::string& stamp)
{
    std::ostringstream out;
    out.precision(17);
    out << "# config_hash=" << stamp << "\nerror,cdf\n";
    for (const auto& [err, f] : e.cdf)
        out << err << ',' << f << '\n';
    return out.str();
}

} // namespace ccloc::metrics

#endif // CCLOC_METRICS_HPP
