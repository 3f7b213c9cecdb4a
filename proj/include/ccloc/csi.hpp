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

#ifndef CCLOC_CSI_HPP
#define CCLOC_CSI_HPP

// Beam-training pilot simulation and per-link channel parameter
// estimation: MVDR AoA search, codeword-based AoD, least-squares gains and
// clock-referenced ToA, assembled into the state vector
// u = [psi, phi, tau, |beta|, arg beta] (length 5L).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ccloc/array_model.hpp"
#include "ccloc/error.hpp"
#include "ccloc/random.hpp"
#include "ccloc/scene.hpp"

namespace ccloc::csi {

using array::ArrayConfig;
using array::CMatrix;
using array::Codebook;
using array::cplx;
using array::CVector;
using array::kPi;

// Receive combiner used after AoA estimation (AoD selection and the gain
// observations v_k). `matched` is the conventional beam a_r / M; `mvdr`
// reuses the spectrum's MVDR weights, which cancel coherent arrivals.
enum class Combiner { matched, mvdr };

inline std::string to_string(Combiner c) { return c == Combiner::matched ? "matched" : "mvdr"; }

inline Combiner parse_combiner(const std::string& s)
{
    if (s == "matched")
        return Combiner::matched;
    if (s == "mvdr")
        return Combiner::mvdr;
    throw ConfigError("unknown combiner '" + s + "' (expected matched or mvdr)");
}

struct PilotConfig {
    double tx_power = 1.0;          // rho, W
    double noise_var = 4e-12;       // sigma^2 at each BS element, W
    int n_snapshots = 8;            // per codeword
    int n_codewords = 16;           // K
    std::vector<cplx> pilot_symbols;  // s_k; empty means all ones
    int grid_size = 512;            // |Phi| over [-pi/2, pi/2)
    double loading = 1e-6;          // diagonal loading factor epsilon
    double peak_floor = 0.05;       // AoA peaks below this fraction of max(P) are ignored
    double sigma_toa = 1e-9;        // ToA measurement noise std, s
    int max_paths = 5;              // L
    Combiner combiner = Combiner::matched;  // receive beam for AoD selection and gain observations

    cplx symbol(int k) const { return pilot_symbols.empty() ? cplx(1.0, 0.0) : pilot_symbols.at(k); }

    void validate() const
    {
        if (!(tx_power > 0.0))
            throw ConfigError("pilot: tx_power must be > 0");
        if (!(noise_var >= 0.0))
            throw ConfigError("pilot: noise_var must be >= 0");
        if (n_snapshots < 1)
            throw ConfigError("pilot: n_snapshots must be >= 1");
        if (n_codewords < 1)
            throw ConfigError("pilot: n_codewords must be >= 1");
        if (!pilot_symbols.empty()) {
            if (static_cast<int>(pilot_symbols.size()) != n_codewords)
                throw ConfigError("pilot: need one pilot symbol per codeword");
            for (const auto& s : pilot_symbols)
                if (std::abs(std::abs(s) - 1.0) > 1e-12)
                    throw ConfigError("pilot: pilot symbols must have unit magnitude");
        }
        if (grid_size < 3)
            throw ConfigError("pilot: grid_size must be >= 3");
        if (!(loading >= 0.0) || !(peak_floor >= 0.0 && peak_floor < 1.0) || !(sigma_toa >= 0.0))
            throw ConfigError("pilot: invalid loading, peak_floor or sigma_toa");
        if (max_paths < 1 || n_codewords < max_paths)
            throw ConfigError("pilot: need 1 <= max_paths <= n_codewords for the gain least squares");
    }
};

// Estimated state vector of one BS-UE link. Masked-out entries are 0.
struct CsiFeature {
    std::vector<double> aod;
    std::vector<double> aoa;
    std::vector<double> toa;
    std::vector<double> gain_mag;
    std::vector<double> gain_phase;
    std::vector<bool> valid;

    int max_paths() const { return static_cast<int>(valid.size()); }

    // [psi(L), phi(L), tau(L), |beta|(L), arg beta(L)]
    std::vector<double> flatten() const
    {
        std::vector<double> out;
        out.reserve(5 * valid.size());
        for (const auto* g : {&aod, &aoa, &toa, &gain_mag, &gain_phase})
            out.insert(out.end(), g->begin(), g->end());
        return out;
    }

    static CsiFeature unflatten(const std::vector<double>& flat, const std::vector<bool>& mask)
    {
        const std::size_t L = mask.size();
        if (flat.size() != 5 * L)
            throw ShapeError("csi: flattened feature must have length 5L");
        CsiFeature f;
        f.valid = mask;
        auto block = [&](int g) {
            return std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(g * L),
                                       flat.begin() + static_cast<std::ptrdiff_t>((g + 1) * L));
        };
        f.aod = block(0);
        f.aoa = block(1);
        f.toa = block(2);
        f.gain_mag = block(3);
        f.gain_phase = block(4);
        return f;
    }

    static CsiFeature empty(int L)
    {
        CsiFeature f;
        f.aod.assign(L, 0.0);
        f.aoa.assign(L, 0.0);
        f.toa.assign(L, 0.0);
        f.gain_mag.assign(L, 0.0);
        f.gain_phase.assign(L, 0.0);
        f.valid.assign(L, false);
        return f;
    }

    friend bool operator==(const CsiFeature&, const CsiFeature&) = default;
};

// One M x n_snapshots block per codeword:
// r = sum_l sqrt(rho) H_l w_k s_k + n. Delays are narrowband phases inside beta.
inline std::vector<CMatrix> simulate_pilot_rx(const scene::PathSet& paths, const Codebook& codebook,
                                              const PilotConfig& pilot, const ArrayConfig& bs_array,
                                              const ArrayConfig& ue_array, std::uint64_t seed)
{
    if (codebook.n_antennas() != ue_array.n_elements)
        throw ShapeError("simulate_pilot_rx: codebook does not match the UE array size");
    if (!pilot.pilot_symbols.empty() && static_cast<int>(pilot.pilot_symbols.size()) != codebook.n_codewords())
        throw ConfigError("simulate_pilot_rx: need one pilot symbol per codeword");
    const int M = bs_array.n_elements;
    const int K = codebook.n_codewords();
    const double amp = std::sqrt(pilot.tx_power);

    // Effective per-path transmit response a_t(psi)^H w_k, one row per path.
    std::vector<CVector> ar;
    std::vector<CVector> at;
    for (const auto& p : paths.paths) {
        ar.push_back(array::steering_vector(bs_array, p.aoa));
        at.push_back(array::steering_vector(ue_array, p.aod));
    }

    Rng rng(seed);
    std::vector<CMatrix> out;
    out.reserve(K);
    for (int k = 0; k < K; ++k) {
        CVector clean = CVector::Zero(M);
        const CVector wk = codebook.columns.col(k);
        for (std::size_t l = 0; l < paths.paths.size(); ++l)
            clean += (amp * paths.paths[l].gain * at[l].dot(wk) * pilot.symbol(k)) * ar[l];
        CMatrix block(M, pilot.n_snapshots);
        for (int t = 0; t < pilot.n_snapshots; ++t) {
            block.col(t) = clean;
            if (pilot.noise_var > 0.0)
                for (int m = 0; m < M; ++m)
                    block(m, t) += complex_normal(rng, pilot.noise_var);
        }
        out.push_back(std::move(block));
    }
    return out;
}

// Sample covariance over all codewords and snapshots, plus eps tr(R)/M I.
inline CMatrix estimate_covariance(const std::vector<CMatrix>& snapshots, double loading)
{
    if (snapshots.empty())
        throw ConfigError("estimate_covariance: no snapshots");
    const auto M = snapshots.front().rows();
    CMatrix R = CMatrix::Zero(M, M);
    Eigen::Index count = 0;
    for (const auto& block : snapshots) {
        if (block.rows() != M)
            throw ShapeError("estimate_covariance: inconsistent snapshot length");
        R.selfadjointView<Eigen::Lower>().rankUpdate(block, 1.0);
        count += block.cols();
    }
    if (count == 0)
        throw ConfigError("estimate_covariance: no snapshots");
    R = R.selfadjointView<Eigen::Lower>();
    R /= static_cast<double>(count);
    const double tr = R.trace().real();
    R.diagonal().array() += loading * tr / static_cast<double>(M);
    return R;
}

struct AoaEstimate {
    std::vector<double> angles;  // sorted by power, descending
    std::vector<double> powers;
    bool low_confidence = false;  // spectrum dynamic range under 3 dB
};

// Local maxima of the MVDR spectrum: strictly above both neighbours and at
// least peak_floor * max(P), strongest first, at most n_peaks.
inline AoaEstimate find_peaks(const array::SpectrumGrid& spec, int n_peaks, double peak_floor)
{
    AoaEstimate out;
    const auto& P = spec.powers;
    const std::size_t G = P.size();
    if (G == 0 || n_peaks <= 0)
        return out;
    const double pmax = *std::max_element(P.begin(), P.end());
    const double pmin = *std::min_element(P.begin(), P.end());
    out.low_confidence = pmax < 2.0 * pmin;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < G; ++i) {
        const bool left = i == 0 || P[i] > P[i - 1];
        const bool right = i + 1 == G || P[i] > P[i + 1];
        if (G > 1 && left && right && P[i] >= peak_floor * pmax)
            idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return P[a] > P[b]; });
    if (static_cast<int>(idx.size()) > n_peaks)
        idx.resize(n_peaks);
    for (auto i : idx) {
        out.angles.push_back(spec.angles[i]);
        out.powers.push_back(P[i]);
    }
    return out;
}

inline AoaEstimate estimate_aoa(const CMatrix& R, const std::vector<double>& grid, int n_peaks,
                                const ArrayConfig& cfg, double peak_floor = 0.05)
{
    return find_peaks(array::power_spectrum(R, grid, cfg), n_peaks, peak_floor);
}

// AoD of each AoA peak: the codeword whose slot delivers the most power
// through the MVDR combiner steered at that peak.
inline CVector make_combiner(Combiner kind, const array::Mvdr* mvdr, const ArrayConfig& bs_array, double phi)
{
    const CVector a = array::steering_vector(bs_array, phi);
    if (kind == Combiner::mvdr) {
        if (!mvdr)
            throw StateError("make_combiner: MVDR combiner requested without a covariance");
        return mvdr->combiner(a);
    }
    return a / static_cast<double>(a.size());
}

// Per estimated AoA: the codeword whose training block delivers the most
// power through a beam steered at that AoA, mapped to its AoD.
inline std::vector<double> estimate_aod(const std::vector<CMatrix>& snapshots, const std::vector<double>& aoas,
                                        const ArrayConfig& bs_array, Combiner kind = Combiner::matched,
                                        const array::Mvdr* mvdr = nullptr)
{
    const int K = static_cast<int>(snapshots.size());
    std::vector<double> out;
    for (double phi : aoas) {
        const CVector q = make_combiner(kind, mvdr, bs_array, phi);
        int best = 0;
        double best_power = -1.0;
        for (int k = 0; k < K; ++k) {
            const double p = (q.adjoint() * snapshots[k]).squaredNorm();
            if (p > best_power) {
                best_power = p;
                best = k;
            }
        }
        out.push_back(array::codeword_to_aod(best, K));
    }
    return out;
}

// For each training slot k, the path whose transmit response
// |a_t(psi_l)^H w_k| is largest. Exact ties rotate through the tied paths
// so co-directional paths each own some slots.
inline std::vector<int> assign_slots(const Codebook& codebook, const std::vector<double>& aods,
                                     const ArrayConfig& ue_array)
{
    const int K = codebook.n_codewords();
    const int L = static_cast<int>(aods.size());
    std::vector<int> owner(K, 0);
    if (L == 0)
        return owner;
    std::vector<CVector> at;
    for (double psi : aods)
        at.push_back(array::steering_vector(ue_array, psi));
    for (int k = 0; k < K; ++k) {
        std::vector<double> score(L);
        for (int l = 0; l < L; ++l)
            score[l] = std::norm(at[l].dot(codebook.columns.col(k)));
        const double best = *std::max_element(score.begin(), score.end());
        std::vector<int> tied;
        for (int l = 0; l < L; ++l)
            if (score[l] >= best * (1.0 - 1e-9))
                tied.push_back(l);
        owner[k] = tied[static_cast<std::size_t>(k) % tied.size()];
    }
    return owner;
}

// F[k, l] = sqrt(rho) s_k (w_k^T a_t*(psi_l)) (q_k^H a_r(phi_l)), i.e. the row
// sqrt(rho) s_k (w_k^T kron q_k^H)(A_t* khatri-rao A_r).
inline CMatrix gain_design_matrix(const Codebook& codebook, const std::vector<CVector>& combiners,
                                  const std::vector<cplx>& pilots, double tx_power, const std::vector<double>& aods,
                                  const std::vector<double>& aoas, const ArrayConfig& bs_array,
                                  const ArrayConfig& ue_array)
{
    const int K = codebook.n_codewords();
    const int L = static_cast<int>(aods.size());
    if (static_cast<int>(aoas.size()) != L)
        throw ShapeError("gain_design_matrix: aod / aoa count mismatch");
    if (static_cast<int>(combiners.size()) != K || static_cast<int>(pilots.size()) != K)
        throw ShapeError("gain_design_matrix: need one combiner and pilot per codeword");
    CMatrix F(K, L);
    const double amp = std::sqrt(tx_power);
    for (int l = 0; l < L; ++l) {
        const CVector at = array::steering_vector(ue_array, aods[l]);
        const CVector ar = array::steering_vector(bs_array, aoas[l]);
        for (int k = 0; k < K; ++k) {
            const cplx tx = codebook.columns.col(k).transpose() * at.conjugate();
            const cplx rx = combiners[k].dot(ar);  // q_k^H a_r
            F(k, l) = amp * pilots[k] * tx * rx;
        }
    }
    return F;
}

// Reciprocal condition number of F^H F below which a column counts as a
// duplicate of the ones already kept.
inline constexpr double kGainRcondMin = 1e-12;

struct GainEstimate {
    std::vector<cplx> gains;
    std::vector<bool> dropped;  // columns removed as linearly dependent
    bool rank_deficient = false;
};

// Complex least squares via the conjugate-transpose normal equations
// (F^H F) beta = F^H v. Columns that make F^H F singular are dropped greedily
// (gain reported as 0 and flagged) and the rest refitted.
inline GainEstimate solve_gains(const CMatrix& F, const CVector& v, double rcond_min = kGainRcondMin)
{
    const auto K = F.rows();
    const auto L = F.cols();
    if (v.size() != K)
        throw ShapeError("estimate_gains: observation length does not match F");
    if (K < L)
        throw ConfigError("estimate_gains: need K >= L observations");
    GainEstimate out;
    out.gains.assign(static_cast<std::size_t>(L), cplx(0.0, 0.0));
    out.dropped.assign(static_cast<std::size_t>(L), false);

    std::vector<Eigen::Index> keep;
    for (Eigen::Index l = 0; l < L; ++l) {
        keep.push_back(l);
        CMatrix sub(K, static_cast<Eigen::Index>(keep.size()));
        for (std::size_t i = 0; i < keep.size(); ++i)
            sub.col(static_cast<Eigen::Index>(i)) = F.col(keep[i]);
        const CMatrix gram = sub.adjoint() * sub;
        Eigen::LLT<CMatrix> llt(gram);
        if (llt.info() != Eigen::Success || !(llt.rcond() > rcond_min)) {
            keep.pop_back();
            out.dropped[static_cast<std::size_t>(l)] = true;
            out.rank_deficient = true;
        }
    }
    if (keep.empty())
        return out;
    CMatrix sub(K, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i)
        sub.col(static_cast<Eigen::Index>(i)) = F.col(keep[i]);
    const CVector beta = (sub.adjoint() * sub).llt().solve(sub.adjoint() * v);
    for (std::size_t i = 0; i < keep.size(); ++i)
        out.gains[static_cast<std::size_t>(keep[i])] = beta[static_cast<Eigen::Index>(i)];
    return out;
}

inline GainEstimate estimate_gains(const CVector& v, const Codebook& codebook, const std::vector<CVector>& combiners,
                                   const std::vector<cplx>& pilots, double tx_power, const std::vector<double>& aods,
                                   const std::vector<double>& aoas, const ArrayConfig& bs_array,
                                   const ArrayConfig& ue_array)
{
    return solve_gains(gain_design_matrix(codebook, combiners, pilots, tx_power, aods, aoas, bs_array, ue_array), v);
}

// Clock-referenced ToA: truth plus N(0, sigma^2), kept strictly positive.
inline std::vector<double> measure_toa(const scene::PathSet& paths, double sigma_toa, std::uint64_t seed)
{
    if (!(sigma_toa >= 0.0))
        throw ConfigError("measure_toa: sigma_toa must be >= 0");
    Rng rng(seed);
    std::vector<double> out;
    out.reserve(paths.paths.size());
    for (const auto& p : paths.paths) {
        double t = p.toa;
        if (sigma_toa > 0.0)
            t += sigma_toa * standard_normal(rng);
        out.push_back(std::max(t, 1e-12));
    }
    return out;
}

// Canonical feature: paths ordered by ascending ToA, zero-padded to L.
inline CsiFeature assemble_feature(const std::vector<double>& aods, const std::vector<double>& aoas,
                                   const std::vector<double>& toas, const std::vector<cplx>& gains, int L)
{
    const std::size_t n = aods.size();
    if (aoas.size() != n || toas.size() != n || gains.size() != n)
        throw ShapeError("assemble_feature: per-path lists must have equal length");
    if (n > static_cast<std::size_t>(L))
        throw ShapeError("assemble_feature: more paths than L");
    if (n == 0)
        throw ConfigError("assemble_feature: no paths (disconnected link)");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Full lexicographic key so permuted inputs give identical output.
    auto key = [&](std::size_t i) {
        return std::make_tuple(toas[i], aoas[i], aods[i], gains[i].real(), gains[i].imag());
    };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    CsiFeature f = CsiFeature::empty(L);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = order[j];
        f.aod[j] = aods[i];
        f.aoa[j] = aoas[i];
        f.toa[j] = toas[i];
        f.gain_mag[j] = std::abs(gains[i]);
        f.gain_phase[j] = gains[i] == cplx(0.0, 0.0) ? 0.0 : scene::wrap_angle(std::arg(gains[i]));
        f.valid[j] = true;
    }
    return f;
}

struct LinkDiagnostics {
    bool connected = false;
    bool low_confidence = false;
    bool rank_deficient = false;
    int n_true_paths = 0;
    int n_estimated = 0;
};

struct LinkEstimate {
    CsiFeature feature;
    LinkDiagnostics diag;
};

// Full per-link chain: pilots -> covariance -> AoA -> AoD -> gains, with
// ToA from the reference clock. Estimated paths are associated with
// measured arrivals by nearest sin(AoA) so each carries its own delay; the
// number of resolvable arrivals bounds the number of AoA peaks used.
inline LinkEstimate estimate_link(const scene::PathSet& paths, const Codebook& codebook, const PilotConfig& pilot,
                                  const ArrayConfig& bs_array, const ArrayConfig& ue_array, std::uint64_t seed)
{
    LinkEstimate out;
    out.feature = CsiFeature::empty(pilot.max_paths);
    out.diag.n_true_paths = paths.n_paths();
    if (!paths.connected())
        return out;
    out.diag.connected = true;

    const auto snaps = simulate_pilot_rx(paths, codebook, pilot, bs_array, ue_array, derive_seed(seed, {1}));
    const CMatrix R = estimate_covariance(snaps, pilot.loading);
    const array::Mvdr mvdr(R);
    const auto grid = array::scan_angles(pilot.grid_size);
    array::SpectrumGrid spec;
    spec.angles = grid;
    for (double phi : grid)
        spec.powers.push_back(mvdr.power(array::steering_vector(bs_array, phi)));
    const int n_arrivals = std::min(paths.n_paths(), pilot.max_paths);
    const AoaEstimate aoa = find_peaks(spec, n_arrivals, pilot.peak_floor);
    out.diag.low_confidence = aoa.low_confidence;
    if (aoa.angles.empty())
        return out;

    const auto aods = estimate_aod(snaps, aoa.angles, bs_array, pilot.combiner, &mvdr);
    const int K = codebook.n_codewords();
    const auto owner = assign_slots(codebook, aods, ue_array);
    std::vector<CVector> Q(K);
    std::vector<cplx> s(K);
    CVector v(K);
    for (int k = 0; k < K; ++k) {
        Q[k] = make_combiner(pilot.combiner, &mvdr, bs_array, aoa.angles[owner[k]]);
        s[k] = pilot.symbol(k);
        const CVector r_bar = snaps[k].rowwise().mean();
        v[k] = Q[k].dot(r_bar);
    }
    const GainEstimate g = estimate_gains(v, codebook, Q, s, pilot.tx_power, aods, aoa.angles, bs_array, ue_array);
    out.diag.rank_deficient = g.rank_deficient;

    const auto toas_all = measure_toa(paths, pilot.sigma_toa, derive_seed(seed, {2}));
    std::vector<bool> used(paths.paths.size(), false);
    std::vector<double> toas;
    for (double phi : aoa.angles) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t i = 0; i < paths.paths.size(); ++i) {
            if (used[i])
                continue;
            const double d = std::abs(std::sin(phi) - std::sin(paths.paths[i].aoa));
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        used[best] = true;
        toas.push_back(toas_all[best]);
    }
    out.feature = assemble_feature(aods, aoa.angles, toas, g.gains, pilot.max_paths);
    out.diag.n_estimated = static_cast<int>(aoa.angles.size());
    return out;
}

} // namespace ccloc::csi

#endif // CCLOC_CSI_HPP
