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

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ccloc/csi.hpp"

using namespace ccloc;
using namespace ccloc::csi;
using array::CMatrix;
using array::CVector;
using array::cplx;
using array::kPi;

namespace {

constexpr double kLambda = 0.0107;
const ArrayConfig kBs{64, 0.5, kLambda};
const ArrayConfig kUe{16, 0.5, kLambda};
const ArrayConfig kSingle{1, 0.5, kLambda};

scene::Path make_path(double aoa, double aod, cplx gain, double toa)
{
    scene::Path p;
    p.aoa = aoa;
    p.aod = aod;
    p.gain = gain;
    p.toa = toa;
    return p;
}

PilotConfig noiseless()
{
    PilotConfig p;
    p.noise_var = 0.0;
    p.n_snapshots = 1;
    return p;
}

int nearest(const std::vector<double>& grid, double x)
{
    int best = 0;
    for (int i = 1; i < static_cast<int>(grid.size()); ++i)
        if (std::abs(grid[i] - x) < std::abs(grid[best] - x))
            best = i;
    return best;
}

// Row k of F written out as (w_k^T kron q_k^H)(A_t^* khatri-rao A_r).
CMatrix kron_design(const Codebook& cb, const std::vector<CVector>& Q, const std::vector<cplx>& s, double rho,
                    const std::vector<double>& aods, const std::vector<double>& aoas)
{
    const int K = cb.n_codewords(), L = static_cast<int>(aods.size());
    const int N = kUe.n_elements, M = kBs.n_elements;
    CMatrix KR(N * M, L);
    for (int l = 0; l < L; ++l) {
        const CVector at = array::steering_vector(kUe, aods[l]).conjugate();
        const CVector ar = array::steering_vector(kBs, aoas[l]);
        for (int n = 0; n < N; ++n)
            KR.block(n * M, l, M, 1) = at[n] * ar;
    }
    CMatrix F(K, L);
    for (int k = 0; k < K; ++k) {
        Eigen::RowVectorXcd row(N * M);
        for (int n = 0; n < N; ++n)
            row.segment(n * M, M) = cb.columns(n, k) * Q[k].adjoint();
        F.row(k) = std::sqrt(rho) * s[k] * row * KR;
    }
    return F;
}

} // namespace

TEST(PilotRx, NoiselessSinglePath)
{
    const auto cb = array::make_codebook(16, 16);
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.3, -0.4, std::polar(2e-6, 0.7), 1e-7));
    auto pilot = noiseless();
    pilot.tx_power = 2.5;
    pilot.pilot_symbols.resize(16);
    for (int k = 0; k < 16; ++k)
        pilot.pilot_symbols[k] = std::polar(1.0, 0.1 * k);
    const auto rx = simulate_pilot_rx(ps, cb, pilot, kBs, kUe, 1);
    ASSERT_EQ(rx.size(), 16u);
    const CVector ar = array::steering_vector(kBs, 0.3), at = array::steering_vector(kUe, -0.4);
    for (int k = 0; k < 16; ++k) {
        const CVector ref = std::sqrt(2.5) * ps.paths[0].gain * at.dot(cb.column(k)) * pilot.symbol(k) * ar;
        EXPECT_LT((rx[k].col(0) - ref).norm(), 1e-12 * ref.norm() + 1e-30);
    }
}

TEST(PilotRx, NoiseMeanShrinks)
{
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.0, 0.0, 0.0, 1e-7));
    PilotConfig p;
    p.noise_var = 2.0;
    p.n_snapshots = 100000;
    p.n_codewords = 1;
    p.max_paths = 1;
    const ArrayConfig bs{4, 0.5, kLambda};
    const auto rx = simulate_pilot_rx(ps, array::make_codebook(1, 1), p, bs, kSingle, 17);
    const CVector mean = rx[0].rowwise().mean();
    for (int m = 0; m < 4; ++m)
        EXPECT_LT(std::abs(mean[m]), 3.0 * std::sqrt(2.0) / std::sqrt(1e5));
    // per-element noise variance
    const double var = rx[0].cwiseAbs2().sum() / rx[0].size();
    EXPECT_NEAR(var, 2.0, 0.05);
}

TEST(PilotRx, PowerLinearInTxPower)
{
    const auto cb = array::make_codebook(16, 16);
    scene::PathSet ps;
    ps.paths.push_back(make_path(-0.2, 0.5, cplx(1e-6, 2e-6), 1e-7));
    auto p = noiseless();
    const auto a = simulate_pilot_rx(ps, cb, p, kBs, kUe, 0);
    p.tx_power *= 2.0;
    const auto b = simulate_pilot_rx(ps, cb, p, kBs, kUe, 0);
    for (int k = 0; k < 16; ++k)
        EXPECT_NEAR(b[k].squaredNorm(), 2.0 * a[k].squaredNorm(), 1e-9 * a[k].squaredNorm() + 1e-40);
}

TEST(PilotRx, DeterministicUnderSeed)
{
    const auto cb = array::make_codebook(16, 16);
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.1, 0.2, 1e-6, 1e-7));
    PilotConfig p;
    const auto a = simulate_pilot_rx(ps, cb, p, kBs, kUe, 5), b = simulate_pilot_rx(ps, cb, p, kBs, kUe, 5);
    const auto c = simulate_pilot_rx(ps, cb, p, kBs, kUe, 6);
    for (int k = 0; k < 16; ++k)
        EXPECT_EQ(a[k], b[k]);
    EXPECT_NE(a[0], c[0]);
}

TEST(PilotRx, CodebookSizeMismatch)
{
    scene::PathSet ps;
    ps.paths.push_back(make_path(0, 0, 1, 1));
    EXPECT_THROW(simulate_pilot_rx(ps, array::make_codebook(16, 8), PilotConfig{}, kBs, kUe, 0), ShapeError);
}

TEST(Covariance, SingleSnapshotRankOne)
{
    CMatrix r(8, 1);
    for (int m = 0; m < 8; ++m)
        r(m, 0) = cplx(m + 1.0, 0.5 * m);
    const CMatrix R0 = estimate_covariance({r}, 0.0);
    EXPECT_LT((R0 - r * r.adjoint()).norm(), 1e-12);
    Eigen::ComplexEigenSolver<CMatrix> es(R0);
    int nonzero = 0;
    for (int i = 0; i < 8; ++i)
        nonzero += std::abs(es.eigenvalues()[i]) > 1e-9 * R0.norm();
    EXPECT_EQ(nonzero, 1);
    const CMatrix R1 = estimate_covariance({r}, 1e-6);
    const double tr = R0.trace().real();
    EXPECT_LT((R1 - R0 - 1e-6 * tr / 8 * CMatrix::Identity(8, 8)).norm(), 1e-12);
}

TEST(Covariance, Hermitian)
{
    const auto cb = array::make_codebook(16, 16);
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.1, 0.2, 1e-6, 1e-7));
    ps.paths.push_back(make_path(-0.6, -0.3, 5e-7, 2e-7));
    const CMatrix R = estimate_covariance(simulate_pilot_rx(ps, cb, PilotConfig{}, kBs, kUe, 3), 1e-6);
    EXPECT_LT((R - R.adjoint()).norm(), 1e-12 * R.norm());
}

TEST(Covariance, LargeSampleLimit)
{
    // One source, single-element UE so the beamforming gain is 1.
    const ArrayConfig bs{16, 0.5, kLambda};
    const double rho = 1.0, s2 = 1.0;
    const cplx beta = std::polar(std::sqrt(10.0), 0.4);
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.35, 0.0, beta, 1e-7));
    PilotConfig p;
    p.tx_power = rho;
    p.noise_var = s2;
    p.n_snapshots = 10000;
    p.n_codewords = 1;
    p.max_paths = 1;
    const CMatrix R = estimate_covariance(simulate_pilot_rx(ps, array::make_codebook(1, 1), p, bs, kSingle, 8), 0.0);
    const CVector a = array::steering_vector(bs, 0.35);
    const CMatrix ref = rho * std::norm(beta) * a * a.adjoint() + s2 * CMatrix::Identity(16, 16);
    EXPECT_LT((R - ref).norm(), 0.05 * ref.norm());
}

TEST(Aoa, SingleSourceMonteCarlo)
{
    const auto grid = array::scan_angles(512);
    int hits = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(derive_seed(1234, {static_cast<std::uint64_t>(trial)}));
        const int idx = 64 + static_cast<int>(uniform_index(rng, 384));
        scene::PathSet ps;
        ps.paths.push_back(make_path(grid[idx], 0.0, 1.0, 1e-7));
        PilotConfig p;
        p.noise_var = 0.01;  // 20 dB per element
        p.n_snapshots = 256;
        p.n_codewords = 1;
        p.max_paths = 1;
        const auto rx = simulate_pilot_rx(ps, array::make_codebook(1, 1), p, kBs, kSingle, rng());
        const auto est = estimate_aoa(estimate_covariance(rx, p.loading), grid, 1, kBs);
        ASSERT_FALSE(est.angles.empty());
        hits += std::abs(nearest(grid, est.angles[0]) - idx) <= 1;
    }
    EXPECT_GE(hits, 95);
}

TEST(Aoa, TwoSourcesResolved)
{
    const auto grid = array::scan_angles(512);
    const auto cb = array::make_codebook(16, 16);
    int ok = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        // 10 beamwidths of 2/M rad apart
        const int i1 = 180 + t, i2 = i1 + static_cast<int>(std::ceil(10 * 2.0 / 64 / (kPi / 512)));
        scene::PathSet ps;
        ps.paths.push_back(make_path(grid[i1], array::codeword_to_aod(5, 16), 1.0, 1e-7));
        ps.paths.push_back(make_path(grid[i2], array::codeword_to_aod(11, 16), std::polar(1.0, 1.0), 2e-7));
        PilotConfig p;
        p.noise_var = 0.16;  // 20 dB after the 16-element transmit beam gain
        p.n_snapshots = 16;
        const auto rx = simulate_pilot_rx(ps, cb, p, kBs, kUe, 100 + t);
        const auto est = estimate_aoa(estimate_covariance(rx, p.loading), grid, 2, kBs);
        if (est.angles.size() != 2)
            continue;
        std::vector<int> got{nearest(grid, est.angles[0]), nearest(grid, est.angles[1])};
        std::sort(got.begin(), got.end());
        ok += std::abs(got[0] - i1) <= 1 && std::abs(got[1] - i2) <= 1;
    }
    EXPECT_GE(ok, 19);
}

TEST(Aoa, WhiteNoiseIsLowConfidence)
{
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.0, 0.0, 0.0, 1e-7));
    PilotConfig p;
    p.noise_var = 1.0;
    p.n_snapshots = 20000;
    p.n_codewords = 1;
    p.max_paths = 1;
    const ArrayConfig bs{16, 0.5, kLambda};
    const auto R = estimate_covariance(simulate_pilot_rx(ps, array::make_codebook(1, 1), p, bs, kSingle, 2), 1e-6);
    const auto spec = array::power_spectrum(R, array::scan_angles(512), bs);
    const auto [lo, hi] = std::minmax_element(spec.powers.begin(), spec.powers.end());
    EXPECT_LT(*hi, 1.1 * *lo);
    EXPECT_TRUE(find_peaks(spec, 5, 0.05).low_confidence);
}

TEST(Aoa, PeakRules)
{
    array::SpectrumGrid s;
    s.angles = {0, 1, 2, 3, 4, 5, 6, 7};
    s.powers = {1, 5, 1, 1, 100, 100, 2, 3};
    // plateau at 4/5 is not strict, index 7 is an edge maximum, index 1 passes the floor
    const auto e = find_peaks(s, 5, 0.03);
    ASSERT_EQ(e.angles.size(), 2u);
    EXPECT_EQ(e.angles[0], 1);
    EXPECT_EQ(e.angles[1], 7);
    EXPECT_EQ(find_peaks(s, 5, 0.04).angles.size(), 1u);
    EXPECT_EQ(find_peaks(s, 1, 0.0).angles.size(), 1u);
}

TEST(Aod, MatchedBeamPicksCodewordNoiseless)
{
    const auto cb = array::make_codebook(16, 16);
    for (int k = 1; k < 16; ++k) {
        scene::PathSet ps;
        ps.paths.push_back(make_path(0.2, array::codeword_to_aod(k, 16), 1e-6, 1e-7));
        const auto rx = simulate_pilot_rx(ps, cb, noiseless(), kBs, kUe, 0);
        EXPECT_DOUBLE_EQ(estimate_aod(rx, {0.2}, kBs)[0], array::codeword_to_aod(k, 16));
        const array::Mvdr mvdr(estimate_covariance(rx, 1e-6));
        EXPECT_DOUBLE_EQ(estimate_aod(rx, {0.2}, kBs, Combiner::mvdr, &mvdr)[0], array::codeword_to_aod(k, 16));
    }
    EXPECT_THROW(make_combiner(Combiner::mvdr, nullptr, kBs, 0.0), StateError);
}

TEST(Gains, ScalarCase)
{
    CMatrix F(1, 1);
    F(0, 0) = cplx(0.3, -1.2);
    CVector v(1);
    v[0] = cplx(2.0, 0.7);
    const auto g = solve_gains(F, v);
    EXPECT_LT(std::abs(g.gains[0] - v[0] / F(0, 0)), 1e-15);
    EXPECT_FALSE(g.rank_deficient);
}

TEST(Gains, DesignMatrixMatchesKroneckerForm)
{
    Rng rng(21);
    const auto cb = array::make_codebook(16, 16);
    std::vector<CVector> Q;
    std::vector<cplx> s;
    for (int k = 0; k < 16; ++k) {
        CVector q(64);
        for (int m = 0; m < 64; ++m)
            q[m] = complex_normal(rng, 1.0);
        Q.push_back(q);
        s.push_back(std::polar(1.0, uniform(rng, -kPi, kPi)));
    }
    const std::vector<double> aods{0.1, -0.7, 1.1}, aoas{0.4, -0.2, 0.9};
    const CMatrix F = gain_design_matrix(cb, Q, s, 3.0, aods, aoas, kBs, kUe);
    const CMatrix G = kron_design(cb, Q, s, 3.0, aods, aoas);
    EXPECT_LT((F - G).norm(), 1e-10 * G.norm());
}

TEST(Gains, NoiselessRecoveryWithTrueAngles)
{
    Rng rng(8);
    const auto cb = array::make_codebook(16, 16);
    for (int trial = 0; trial < 20; ++trial) {
        scene::PathSet ps;
        std::vector<double> aods, aoas;
        std::vector<cplx> truth;
        for (int l = 0; l < 3; ++l) {
            const double aoa = uniform(rng, -1.2, 1.2), aod = uniform(rng, -1.2, 1.2);
            const cplx b = std::polar(uniform(rng, 1e-7, 1e-5), uniform(rng, -kPi, kPi));
            ps.paths.push_back(make_path(aoa, aod, b, 1e-7 * (l + 1)));
            aods.push_back(aod);
            aoas.push_back(aoa);
            truth.push_back(b);
        }
        const auto rx = simulate_pilot_rx(ps, cb, noiseless(), kBs, kUe, 0);
        const auto owner = assign_slots(cb, aods, kUe);
        std::vector<CVector> Q;
        std::vector<cplx> s(16, 1.0);
        CVector v(16);
        for (int k = 0; k < 16; ++k) {
            Q.push_back(make_combiner(Combiner::matched, nullptr, kBs, aoas[owner[k]]));
            v[k] = Q[k].dot(rx[k].col(0));
        }
        const auto g = estimate_gains(v, cb, Q, s, 1.0, aods, aoas, kBs, kUe);
        ASSERT_FALSE(g.rank_deficient);
        for (int l = 0; l < 3; ++l)
            EXPECT_LT(std::abs(g.gains[l] - truth[l]) / std::abs(truth[l]), 1e-8);
    }
}

TEST(Gains, LeastSquaresOptimality)
{
    Rng rng(31);
    for (int t = 0; t < 50; ++t) {
        CMatrix F(16, 4);
        CVector v(16), beta(4);
        for (int i = 0; i < F.size(); ++i)
            F.data()[i] = complex_normal(rng, 1.0);
        for (int i = 0; i < 16; ++i)
            v[i] = complex_normal(rng, 1.0);
        for (int i = 0; i < 4; ++i)
            beta[i] = complex_normal(rng, 1.0);
        const auto g = solve_gains(F, v);
        const CVector est = Eigen::Map<const CVector>(g.gains.data(), 4);
        EXPECT_LE((v - F * est).norm(), (v - F * beta).norm() + 1e-12);
        // normal equations hold
        EXPECT_LT((F.adjoint() * (v - F * est)).norm(), 1e-10 * v.norm());
    }
}

TEST(Gains, PilotPhaseAbsorbedByDesign)
{
    const auto cb = array::make_codebook(16, 16);
    scene::PathSet ps;
    ps.paths.push_back(make_path(0.3, array::codeword_to_aod(4, 16), cplx(1e-6, -2e-6), 1e-7));
    ps.paths.push_back(make_path(-0.5, array::codeword_to_aod(12, 16), cplx(-3e-7, 1e-6), 2e-7));
    const std::vector<double> aods{ps.paths[0].aod, ps.paths[1].aod}, aoas{0.3, -0.5};
    auto run = [&](double theta) {
        auto p = noiseless();
        p.pilot_symbols.assign(16, std::polar(1.0, theta));
        const auto rx = simulate_pilot_rx(ps, cb, p, kBs, kUe, 0);
        const auto owner = assign_slots(cb, aods, kUe);
        std::vector<CVector> Q;
        CVector v(16);
        for (int k = 0; k < 16; ++k) {
            Q.push_back(make_combiner(Combiner::matched, nullptr, kBs, aoas[owner[k]]));
            v[k] = Q[k].dot(rx[k].col(0));
        }
        return estimate_gains(v, cb, Q, p.pilot_symbols, 1.0, aods, aoas, kBs, kUe).gains;
    };
    const auto a = run(0.0), b = run(1.3);
    for (int l = 0; l < 2; ++l)
        EXPECT_LT(std::abs(a[l] - b[l]), 1e-9 * std::abs(a[l]));
}

TEST(Gains, DuplicateAnglesDroppedAndFlagged)
{
    const auto cb = array::make_codebook(16, 16);
    std::vector<CVector> Q;
    for (int k = 0; k < 16; ++k)
        Q.push_back(make_combiner(Combiner::matched, nullptr, kBs, 0.3));
    const std::vector<cplx> s(16, 1.0);
    const CMatrix F = gain_design_matrix(cb, Q, s, 1.0, {0.2, 0.2, -0.4}, {0.3, 0.3, 0.3}, kBs, kUe);
    CVector v = F.col(0) * cplx(2.0, 1.0) + F.col(2) * cplx(-1.0, 0.5);
    const auto g = solve_gains(F, v);
    EXPECT_TRUE(g.rank_deficient);
    EXPECT_FALSE(g.dropped[0]);
    EXPECT_TRUE(g.dropped[1]);
    EXPECT_EQ(g.gains[1], cplx(0.0, 0.0));
    EXPECT_LT(std::abs(g.gains[0] - cplx(2.0, 1.0)), 1e-9);
    EXPECT_LT(std::abs(g.gains[2] - cplx(-1.0, 0.5)), 1e-9);
}

TEST(Gains, RejectsUnderdetermined)
{
    EXPECT_THROW(solve_gains(CMatrix::Ones(2, 3), CVector::Ones(2)), ConfigError);
    EXPECT_THROW(solve_gains(CMatrix::Ones(3, 2), CVector::Ones(2)), ShapeError);
}

TEST(Toa, ExactWithoutNoise)
{
    scene::PathSet ps;
    ps.paths.push_back(make_path(0, 0, 1, 3.3e-7));
    ps.paths.push_back(make_path(0, 0, 1, 4.1e-7));
    const auto t = measure_toa(ps, 0.0, 9);
    EXPECT_EQ(t[0], 3.3e-7);
    EXPECT_EQ(t[1], 4.1e-7);
}

TEST(Toa, NoiseStatistics)
{
    scene::PathSet ps;
    for (int i = 0; i < 10000; ++i)
        ps.paths.push_back(make_path(0, 0, 1, 1e-6));
    const double sigma = 1e-9;
    const auto t = measure_toa(ps, sigma, 77);
    double m = 0, v = 0;
    for (double x : t)
        m += x;
    m /= t.size();
    for (double x : t)
        v += (x - m) * (x - m);
    const double sd = std::sqrt(v / (t.size() - 1));
    EXPECT_NEAR(sd, sigma, 0.05 * sigma);
    EXPECT_NEAR(sd * scene::kSpeedOfLight, 0.2998, 0.05 * 0.2998);
    EXPECT_THROW(measure_toa(ps, -1.0, 0), ConfigError);
}

TEST(Feature, FullAndPadded)
{
    const std::vector<double> a{0.1, 0.2, 0.3, 0.4, 0.5};
    const std::vector<double> t{1, 2, 3, 4, 5};
    const std::vector<cplx> g(5, cplx(0, 1));
    const auto f = assemble_feature(a, a, t, g, 5);
    EXPECT_EQ(f.flatten().size(), 25u);
    EXPECT_TRUE(std::all_of(f.valid.begin(), f.valid.end(), [](bool b) { return b; }));
    EXPECT_NEAR(f.gain_phase[0], kPi / 2, 1e-15);

    const auto p = assemble_feature({0.1, 0.2}, {0.3, 0.4}, {2e-7, 1e-7}, {cplx(1, 0), cplx(0, 2)}, 5);
    EXPECT_EQ(p.valid, (std::vector<bool>{true, true, false, false, false}));
    const auto flat = p.flatten();
    ASSERT_EQ(flat.size(), 25u);
    for (int g2 = 0; g2 < 5; ++g2)
        for (int j = 2; j < 5; ++j)
            EXPECT_EQ(flat[g2 * 5 + j], 0.0);
    EXPECT_EQ(p.toa[0], 1e-7);  // sorted by arrival
    EXPECT_EQ(p.gain_mag[0], 2.0);
}

TEST(Feature, PermutationInvariant)
{
    std::vector<int> idx{0, 1, 2, 3};
    const std::vector<double> aod{0.1, -0.2, 0.3, 0.7}, aoa{1.0, 0.5, -0.5, 0.2}, toa{3e-7, 1e-7, 4e-7, 2e-7};
    const std::vector<cplx> g{cplx(1, 1), cplx(0, 1), cplx(2, 0), cplx(-1, 0)};
    const auto ref = assemble_feature(aod, aoa, toa, g, 5);
    do {
        std::vector<double> a, b, t;
        std::vector<cplx> gg;
        for (int i : idx) {
            a.push_back(aod[i]);
            b.push_back(aoa[i]);
            t.push_back(toa[i]);
            gg.push_back(g[i]);
        }
        EXPECT_EQ(assemble_feature(a, b, t, gg, 5), ref);
    } while (std::next_permutation(idx.begin(), idx.end()));
}

TEST(Feature, ErrorsAndRoundTrip)
{
    EXPECT_THROW(assemble_feature({}, {}, {}, {}, 5), ConfigError);
    EXPECT_THROW(assemble_feature({0, 0}, {0}, {1, 1}, {1, 1}, 5), ShapeError);
    const auto f = assemble_feature({0.1, 0.2}, {0.3, 0.4}, {2e-7, 1e-7}, {cplx(1, 0), cplx(0, 2)}, 5);
    EXPECT_EQ(CsiFeature::unflatten(f.flatten(), f.valid), f);
}

TEST(Link, NoiselessEndToEndIdentifiability)
{
    const auto cb = array::make_codebook(16, 16);
    const auto grid = array::scan_angles(512);
    scene::PathSet ps;
    const cplx b1 = std::polar(4e-6, 0.3), b2 = std::polar(1.5e-6, -2.0);
    ps.paths.push_back(make_path(grid[200], array::codeword_to_aod(3, 16), b1, 1e-7));
    ps.paths.push_back(make_path(grid[330], array::codeword_to_aod(10, 16), b2, 2e-7));
    PilotConfig p;
    p.noise_var = 0.0;
    p.n_snapshots = 625;  // 10^4 snapshots in total
    p.sigma_toa = 0.0;
    const auto est = estimate_link(ps, cb, p, kBs, kUe, 4);
    ASSERT_EQ(est.diag.n_estimated, 2);
    const auto& f = est.feature;
    EXPECT_NEAR(f.aoa[0], grid[200], 1e-3 * std::abs(grid[200]));
    EXPECT_NEAR(f.aoa[1], grid[330], 1e-3 * std::abs(grid[330]));
    EXPECT_NEAR(f.aod[0], ps.paths[0].aod, 1e-12);
    EXPECT_NEAR(f.aod[1], ps.paths[1].aod, 1e-12);
    EXPECT_LT(std::abs(std::polar(f.gain_mag[0], f.gain_phase[0]) - b1) / std::abs(b1), 1e-3);
    EXPECT_LT(std::abs(std::polar(f.gain_mag[1], f.gain_phase[1]) - b2) / std::abs(b2), 1e-3);
    EXPECT_EQ(f.toa[0], 1e-7);
    EXPECT_EQ(f.toa[1], 2e-7);
}

TEST(Link, DisconnectedGivesEmptyFeature)
{
    const auto est = estimate_link(scene::PathSet{}, array::make_codebook(16, 16), PilotConfig{}, kBs, kUe, 0);
    EXPECT_FALSE(est.diag.connected);
    EXPECT_EQ(est.feature, CsiFeature::empty(5));
}

TEST(PilotConfig, Validation)
{
    PilotConfig p;
    EXPECT_NO_THROW(p.validate());
    p.max_paths = 20;
    EXPECT_THROW(p.validate(), ConfigError);
    p = PilotConfig{};
    p.pilot_symbols.assign(16, cplx(2.0, 0.0));
    EXPECT_THROW(p.validate(), ConfigError);
    EXPECT_EQ(parse_combiner("mvdr"), Combiner::mvdr);
    EXPECT_THROW(parse_combiner("bartlett"), ConfigError);
}
