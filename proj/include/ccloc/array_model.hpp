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

#ifndef CCLOC_ARRAY_MODEL_HPP
#define CCLOC_ARRAY_MODEL_HPP

// Uniform linear array math shared by the channel simulator and the
// estimators: steering vectors, the UE beam-training codebook and MVDR
// combining / spatial power spectra.

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccloc/error.hpp"

namespace ccloc::array {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr double kPi = std::numbers::pi;

struct ArrayConfig {
    int n_elements = 1;          // M at the BS, N at the UE
    double spacing_ratio = 0.5;  // d / lambda
    double wavelength = 0.0;     // meters

    void validate() const
    {
        if (n_elements < 1)
            throw ConfigError("array: n_elements must be >= 1");
        if (!(spacing_ratio > 0.0))
            throw ConfigError("array: spacing_ratio must be > 0");
        if (!(wavelength > 0.0))
            throw ConfigError("array: wavelength must be > 0");
    }
};

// a(angle)[m] = exp(-j m 2 pi (d/lambda) sin(angle)); element 0 is exactly 1.
inline CVector steering_vector(const ArrayConfig& cfg, double angle)
{
    CVector a(cfg.n_elements);
    const double phase = 2.0 * kPi * cfg.spacing_ratio * std::sin(angle);
    a[0] = cplx(1.0, 0.0);
    for (int m = 1; m < cfg.n_elements; ++m)
        a[m] = std::polar(1.0, -phase * m);
    return a;
}

// Codeword k of a K-beam DFT-style codebook for an N-element UE array,
// (1/sqrt N) exp(-j pi (2k/K - 1) n). k is 0-based.
inline CVector codeword(int k, int K, int N)
{
    if (K < 1 || N < 1)
        throw ConfigError("codeword: K and N must be >= 1");
    if (k < 0 || k >= K)
        throw std::out_of_range("codeword: index " + std::to_string(k) + " outside [0, " +
                                std::to_string(K) + ")");
    const double step = kPi * (2.0 * k / K - 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(N));
    CVector w(N);
    w[0] = cplx(scale, 0.0);
    for (int n = 1; n < N; ++n)
        w[n] = std::polar(scale, -step * n);
    return w;
}

// Beam direction of codeword k for half-wavelength spacing.
inline double codeword_to_aod(int k, int K)
{
    if (K < 1 || k < 0 || k >= K)
        throw std::out_of_range("codeword_to_aod: index out of range");
    return std::asin(2.0 * k / K - 1.0);
}

// K unit-norm codewords stored as the columns of an N x K matrix.
struct Codebook {
    CMatrix columns;

    int n_codewords() const { return static_cast<int>(columns.cols()); }
    int n_antennas() const { return static_cast<int>(columns.rows()); }
    CVector column(int k) const { return columns.col(k); }
};

inline Codebook make_codebook(int K, int N)
{
    Codebook cb;
    cb.columns.resize(N, K);
    for (int k = 0; k < K; ++k)
        cb.columns.col(k) = codeword(k, K, N);
    return cb;
}

struct SpectrumGrid {
    std::vector<double> angles;  // strictly increasing, radians
    std::vector<double> powers;  // P(angle) >= 0
};

// |grid| angles uniformly covering [-pi/2, pi/2).
inline std::vector<double> scan_angles(int grid_size)
{
    if (grid_size < 1)
        throw ConfigError("scan grid must be nonempty");
    std::vector<double> out(grid_size);
    for (int i = 0; i < grid_size; ++i)
        out[i] = -kPi / 2.0 + kPi * i / grid_size;
    return out;
}

// Caches the factorization of a covariance matrix so that many MVDR
// combiners / spectrum points can be evaluated against it.
class Mvdr {
public:
    explicit Mvdr(const CMatrix& R)
    {
        if (R.rows() != R.cols() || R.rows() == 0)
            throw ShapeError("mvdr: covariance must be square and nonempty");
        llt_.compute(R);
        if (llt_.info() != Eigen::Success)
            throw NumericalError("mvdr: covariance is not positive definite (add diagonal loading)");
        const double rc = llt_.rcond();
        if (!(rc > 1e-14))
            throw NumericalError("mvdr: covariance is numerically singular, rcond = " + std::to_string(rc));
    }

    int size() const { return static_cast<int>(llt_.matrixL().rows()); }

    // q = R^-1 a / (a^H R^-1 a)
    CVector combiner(const CVector& a) const
    {
        check(a);
        const CVector x = llt_.solve(a);
        const cplx denom = a.dot(x);  // a^H R^-1 a
        if (!(std::abs(denom) > 0.0) || !std::isfinite(std::abs(denom)))
            throw NumericalError("mvdr: degenerate distortionless denominator");
        return x / denom;
    }

    // P = q^H R q = 1 / (a^H R^-1 a)
    double power(const CVector& a) const
    {
        check(a);
        const CVector x = llt_.solve(a);
        const double denom = a.dot(x).real();
        if (!(denom > 0.0))
            throw NumericalError("mvdr: nonpositive quadratic form");
        return 1.0 / denom;
    }

private:
    void check(const CVector& a) const
    {
        if (a.size() != size())
            throw ShapeError("mvdr: steering vector length does not match covariance");
    }

    Eigen::LLT<CMatrix> llt_;
};

inline CVector mvdr_combiner(const CMatrix& R, const CVector& a)
{
    return Mvdr(R).combiner(a);
}

inline SpectrumGrid power_spectrum(const CMatrix& R, const std::vector<double>& grid, const ArrayConfig& cfg)
{
    if (grid.empty())
        throw ConfigError("power_spectrum: empty grid");
    const Mvdr mvdr(R);
    SpectrumGrid out;
    out.angles = grid;
    out.powers.reserve(grid.size());
    for (double phi : grid)
        out.powers.push_back(mvdr.power(steering_vector(cfg, phi)));
    return out;
}

} // namespace ccloc::array

#endif // CCLOC_ARRAY_MODEL_HPP
