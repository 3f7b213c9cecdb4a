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

#ifndef CCLOC_NN_HPP
#define CCLOC_NN_HPP

// Small sequential network engine: 1-D conv / pool / upsample / dense layers
// with analytic backward passes, Adam, a finite-difference checker and a
// binary checkpoint format. Everything is float64.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccloc/error.hpp"
#include "ccloc/random.hpp"

namespace ccloc::nn {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s)
{
    std::size_t n = 1;
    for (int d : s)
        n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s)
{
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

struct Tensor {
    Shape shape;
    std::vector<double> data;  // row-major

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0) { check(); }
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d))
    {
        check();
        if (data.size() != shape_size(shape))
            throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check() const
    {
        for (int d : shape)
            if (d <= 0)
                throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
    }
};

enum class Kind { conv1d, maxpool1d, upsample1d, dense, relu, sigmoid, flatten, reshape };

inline std::string to_string(Kind k)
{
    switch (k) {
    case Kind::conv1d: return "conv1d";
    case Kind::maxpool1d: return "maxpool1d";
    case Kind::upsample1d: return "upsample1d";
    case Kind::dense: return "dense";
    case Kind::relu: return "relu";
    case Kind::sigmoid: return "sigmoid";
    case Kind::flatten: return "flatten";
    case Kind::reshape: return "reshape";
    }
    return "?";
}

struct LayerSpec {
    Kind kind = Kind::relu;
    int channels = 0;  // conv1d output channels
    int kernel = 0;    // conv1d kernel / pool width
    int stride = 1;
    int units = 0;     // dense
    int factor = 0;    // upsample
    Shape shape;       // reshape target

    static LayerSpec conv1d(int out_channels, int kernel, int stride = 1)
    {
        return {Kind::conv1d, out_channels, kernel, stride, 0, 0, {}};
    }
    static LayerSpec maxpool1d(int width, int stride = 0) { return {Kind::maxpool1d, 0, width, stride ? stride : width, 0, 0, {}}; }
    static LayerSpec upsample1d(int factor) { return {Kind::upsample1d, 0, 0, 1, 0, factor, {}}; }
    static LayerSpec dense(int units) { return {Kind::dense, 0, 0, 1, units, 0, {}}; }
    static LayerSpec relu() { return {Kind::relu, 0, 0, 1, 0, 0, {}}; }
    static LayerSpec sigmoid() { return {Kind::sigmoid, 0, 0, 1, 0, 0, {}}; }
    static LayerSpec flatten() { return {Kind::flatten, 0, 0, 1, 0, 0, {}}; }
    static LayerSpec reshape(Shape s) { return {Kind::reshape, 0, 0, 1, 0, 0, std::move(s)}; }

    nlohmann::json to_json() const
    {
        nlohmann::json j{{"kind", to_string(kind)}};
        switch (kind) {
        case Kind::conv1d: j["channels"] = channels; j["kernel"] = kernel; j["stride"] = stride; break;
        case Kind::maxpool1d: j["width"] = kernel; j["stride"] = stride; break;
        case Kind::upsample1d: j["factor"] = factor; break;
        case Kind::dense: j["units"] = units; break;
        case Kind::reshape: j["shape"] = shape; break;
        default: break;
        }
        return j;
    }
};

// Resolved layer: shapes and parameter offsets within the net's flat block.
struct LayerSlot {
    LayerSpec spec;
    Shape in_shape, out_shape;
    std::size_t w_offset = 0, w_count = 0;
    std::size_t b_offset = 0, b_count = 0;
    int fan_in = 0, fan_out = 0;
};

class Net {
public:
    Net() = default;
    Net(Shape input_shape, std::vector<LayerSpec> layers) : input_(std::move(input_shape))
    {
        if (input_.empty() || shape_size(input_) == 0)
            throw ShapeError("net: empty input shape");
        Shape cur = input_;
        std::size_t off = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            LayerSlot s;
            s.spec = layers[i];
            s.in_shape = cur;
            const auto fail = [&](const std::string& msg) {
                throw ShapeError("layer " + std::to_string(i) + " (" + to_string(s.spec.kind) + "): " + msg +
                                 ", input shape " + shape_str(cur));
            };
            switch (s.spec.kind) {
            case Kind::conv1d: {
                if (cur.size() != 2)
                    fail("expects (channels, length)");
                if (s.spec.channels < 1 || s.spec.kernel < 1 || s.spec.stride < 1)
                    fail("channels, kernel and stride must be >= 1");
                if (s.spec.kernel > cur[1])
                    fail("kernel " + std::to_string(s.spec.kernel) + " exceeds input length");
                s.out_shape = {s.spec.channels, (cur[1] - s.spec.kernel) / s.spec.stride + 1};
                s.w_count = static_cast<std::size_t>(s.spec.channels) * cur[0] * s.spec.kernel;
                s.b_count = static_cast<std::size_t>(s.spec.channels);
                s.fan_in = cur[0] * s.spec.kernel;
                s.fan_out = s.spec.channels * s.spec.kernel;
                break;
            }
            case Kind::maxpool1d:
                if (cur.size() != 2)
                    fail("expects (channels, length)");
                if (s.spec.kernel < 1 || s.spec.stride < 1 || s.spec.kernel > cur[1])
                    fail("bad pool width/stride");
                s.out_shape = {cur[0], (cur[1] - s.spec.kernel) / s.spec.stride + 1};
                break;
            case Kind::upsample1d:
                if (cur.size() != 2)
                    fail("expects (channels, length)");
                if (s.spec.factor < 1)
                    fail("factor must be >= 1");
                s.out_shape = {cur[0], cur[1] * s.spec.factor};
                break;
            case Kind::dense:
                if (cur.size() != 1)
                    fail("expects a flat vector");
                if (s.spec.units < 1)
                    fail("units must be >= 1");
                s.out_shape = {s.spec.units};
                s.w_count = static_cast<std::size_t>(s.spec.units) * cur[0];
                s.b_count = static_cast<std::size_t>(s.spec.units);
                s.fan_in = cur[0];
                s.fan_out = s.spec.units;
                break;
            case Kind::relu:
            case Kind::sigmoid: s.out_shape = cur; break;
            case Kind::flatten: s.out_shape = {static_cast<int>(shape_size(cur))}; break;
            case Kind::reshape:
                if (s.spec.shape.empty() || shape_size(s.spec.shape) != shape_size(cur) ||
                    std::any_of(s.spec.shape.begin(), s.spec.shape.end(), [](int d) { return d <= 0; }))
                    fail("reshape target " + shape_str(s.spec.shape) + " has a different size");
                s.out_shape = s.spec.shape;
                break;
            }
            s.w_offset = off;
            off += s.w_count;
            s.b_offset = off;
            off += s.b_count;
            cur = s.out_shape;
            slots_.push_back(std::move(s));
        }
        output_ = cur;
        n_params_ = off;
    }

    const Shape& input_shape() const { return input_; }
    const Shape& output_shape() const { return output_; }
    const std::vector<LayerSlot>& slots() const { return slots_; }
    std::size_t n_params() const { return n_params_; }

    nlohmann::json to_json() const
    {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& s : slots_)
            layers.push_back(s.spec.to_json());
        return {{"input", input_}, {"layers", layers}, {"n_params", n_params_}};
    }

private:
    Shape input_, output_;
    std::vector<LayerSlot> slots_;
    std::size_t n_params_ = 0;
};

// Owns a flat parameter vector. `version` changes on every mutation so that
// caches produced by an older forward pass can be rejected.
class Params {
public:
    Params() = default;
    explicit Params(std::size_t n) : values_(n, 0.0) {}

    std::size_t size() const { return values_.size(); }
    std::span<const double> view() const { return values_; }
    std::span<double> mutable_view()
    {
        ++version_;
        return values_;
    }
    const std::vector<double>& values() const { return values_; }
    void assign(std::span<const double> v)
    {
        if (v.size() != values_.size())
            throw ShapeError("params: assign with length " + std::to_string(v.size()) + ", expected " +
                             std::to_string(values_.size()));
        std::copy(v.begin(), v.end(), values_.begin());
        ++version_;
    }
    std::uint64_t version() const { return version_; }

private:
    std::vector<double> values_;
    std::uint64_t version_ = 1;
};

// Parameters of one net: a sub-span of some flat vector plus the owner's
// version stamp.
struct ParamView {
    std::span<const double> values;
    std::uint64_t version = 0;
};

inline ParamView view_of(const Params& p, std::size_t offset = 0, std::size_t count = static_cast<std::size_t>(-1))
{
    if (count == static_cast<std::size_t>(-1))
        count = p.size() - offset;
    if (offset + count > p.size())
        throw ShapeError("params: view out of range");
    return {p.view().subspan(offset, count), p.version()};
}

// Glorot-uniform weights, zero biases.
inline void init_params(const Net& net, std::span<double> out, Rng& rng)
{
    if (out.size() != net.n_params())
        throw ShapeError("init_params: span length does not match net");
    for (const auto& s : net.slots()) {
        const double lim = s.w_count ? std::sqrt(6.0 / (s.fan_in + s.fan_out)) : 0.0;
        for (std::size_t i = 0; i < s.w_count; ++i)
            out[s.w_offset + i] = uniform(rng, -lim, lim);
        for (std::size_t i = 0; i < s.b_count; ++i)
            out[s.b_offset + i] = 0.0;
    }
}

struct Cache {
    const Net* net = nullptr;
    const double* params = nullptr;
    std::uint64_t version = 0;
    std::vector<Tensor> inputs;               // input of each layer
    std::vector<std::vector<int>> argmax;     // maxpool winners (flat input index)
    Tensor output;
};

// Hash of the piecewise-linear regime (relu signs, maxpool winners). Equal
// signatures mean the loss is smooth between the two evaluations.
inline std::uint64_t activation_signature(const Cache& c, std::uint64_t h = 0x9e3779b97f4a7c15ULL)
{
    const auto& slots = c.net->slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].spec.kind == Kind::relu) {
            std::uint64_t word = 0;
            int nbits = 0;
            for (double z : c.inputs[i].data) {
                word = (word << 1) | (z > 0.0 ? 1u : 0u);
                if (++nbits == 64) {
                    h = mix64(h ^ word);
                    word = 0;
                    nbits = 0;
                }
            }
            h = mix64(h ^ word ^ static_cast<std::uint64_t>(nbits));
        } else if (slots[i].spec.kind == Kind::maxpool1d) {
            for (int a : c.argmax[i])
                h = mix64(h ^ static_cast<std::uint64_t>(a));
        }
    }
    return h;
}

inline double sigmoid_fn(double z)
{
    if (z >= 0.0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Tensor forward(const Net& net, ParamView p, const Tensor& input, Cache* cache = nullptr)
{
    if (input.shape != net.input_shape())
        throw ShapeError("forward: input shape " + shape_str(input.shape) + " does not match net input " +
                         shape_str(net.input_shape()));
    if (p.values.size() != net.n_params())
        throw ShapeError("forward: parameter block has " + std::to_string(p.values.size()) + " values, net needs " +
                         std::to_string(net.n_params()));
    const double* P = p.values.data();
    if (cache) {
        cache->net = &net;
        cache->params = P;
        cache->version = p.version;
        cache->inputs.assign(net.slots().size(), Tensor{});
        cache->argmax.assign(net.slots().size(), {});
    }
    Tensor x = input;
    for (std::size_t li = 0; li < net.slots().size(); ++li) {
        const LayerSlot& s = net.slots()[li];
        Tensor y(s.out_shape);
        switch (s.spec.kind) {
        case Kind::conv1d: {
            const int Ci = s.in_shape[0], Li = s.in_shape[1];
            const int Co = s.out_shape[0], Lo = s.out_shape[1];
            const int K = s.spec.kernel, st = s.spec.stride;
            const double* W = P + s.w_offset;
            const double* b = P + s.b_offset;
            for (int o = 0; o < Co; ++o) {
                double* yo = y.data.data() + static_cast<std::size_t>(o) * Lo;
                for (int t = 0; t < Lo; ++t)
                    yo[t] = b[o];
                for (int c = 0; c < Ci; ++c) {
                    const double* xc = x.data.data() + static_cast<std::size_t>(c) * Li;
                    const double* w = W + (static_cast<std::size_t>(o) * Ci + c) * K;
                    for (int t = 0; t < Lo; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < K; ++j)
                            acc += w[j] * xc[t * st + j];
                        yo[t] += acc;
                    }
                }
            }
            break;
        }
        case Kind::maxpool1d: {
            const int C = s.in_shape[0], Li = s.in_shape[1], Lo = s.out_shape[1];
            std::vector<int> arg(y.size());
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < Lo; ++t) {
                    int best = c * Li + t * s.spec.stride;
                    for (int j = 1; j < s.spec.kernel; ++j) {
                        const int idx = c * Li + t * s.spec.stride + j;
                        if (x.data[idx] > x.data[best])  // ties keep the lowest index
                            best = idx;
                    }
                    y.data[static_cast<std::size_t>(c) * Lo + t] = x.data[best];
                    arg[static_cast<std::size_t>(c) * Lo + t] = best;
                }
            if (cache)
                cache->argmax[li] = std::move(arg);
            break;
        }
        case Kind::upsample1d: {
            const int C = s.in_shape[0], Li = s.in_shape[1], f = s.spec.factor;
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < Li * f; ++t)
                    y.data[static_cast<std::size_t>(c) * Li * f + t] = x.data[static_cast<std::size_t>(c) * Li + t / f];
            break;
        }
        case Kind::dense: {
            const int In = s.in_shape[0], Out = s.out_shape[0];
            const double* W = P + s.w_offset;
            const double* b = P + s.b_offset;
            for (int o = 0; o < Out; ++o) {
                const double* w = W + static_cast<std::size_t>(o) * In;
                double acc = b[o];
                for (int i = 0; i < In; ++i)
                    acc += w[i] * x.data[i];
                y.data[o] = acc;
            }
            break;
        }
        case Kind::relu:
            for (std::size_t i = 0; i < x.size(); ++i)
                y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
            break;
        case Kind::sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i)
                y.data[i] = sigmoid_fn(x.data[i]);
            break;
        case Kind::flatten:
        case Kind::reshape: y.data = x.data; break;
        }
        if (cache)
            cache->inputs[li] = std::move(x);
        x = std::move(y);
    }
    if (cache)
        cache->output = x;
    return x;
}

// Accumulates dLoss/dparams into `grad` (same layout as the net's block)
// and returns dLoss/dinput.
inline Tensor backward(const Net& net, ParamView p, const Cache& cache, const Tensor& output_grad,
                       std::span<double> grad)
{
    if (cache.net != &net || cache.params != p.values.data() || cache.version != p.version)
        throw StateError("backward: cache does not come from a forward pass with these parameters");
    if (output_grad.shape != net.output_shape())
        throw ShapeError("backward: output gradient shape " + shape_str(output_grad.shape) + " does not match " +
                         shape_str(net.output_shape()));
    if (grad.size() != net.n_params())
        throw ShapeError("backward: gradient buffer length does not match net");
    const double* P = p.values.data();
    Tensor g = output_grad;
    for (std::size_t li = net.slots().size(); li-- > 0;) {
        const LayerSlot& s = net.slots()[li];
        const Tensor& x = cache.inputs[li];
        Tensor gx(s.in_shape);
        switch (s.spec.kind) {
        case Kind::conv1d: {
            const int Ci = s.in_shape[0], Li = s.in_shape[1];
            const int Co = s.out_shape[0], Lo = s.out_shape[1];
            const int K = s.spec.kernel, st = s.spec.stride;
            const double* W = P + s.w_offset;
            double* gW = grad.data() + s.w_offset;
            double* gb = grad.data() + s.b_offset;
            for (int o = 0; o < Co; ++o) {
                const double* go = g.data.data() + static_cast<std::size_t>(o) * Lo;
                double sb = 0.0;
                for (int t = 0; t < Lo; ++t)
                    sb += go[t];
                gb[o] += sb;
                for (int c = 0; c < Ci; ++c) {
                    const double* xc = x.data.data() + static_cast<std::size_t>(c) * Li;
                    double* gxc = gx.data.data() + static_cast<std::size_t>(c) * Li;
                    const std::size_t wo = (static_cast<std::size_t>(o) * Ci + c) * K;
                    for (int j = 0; j < K; ++j) {
                        double acc = 0.0;
                        for (int t = 0; t < Lo; ++t)
                            acc += go[t] * xc[t * st + j];
                        gW[wo + j] += acc;
                    }
                    for (int t = 0; t < Lo; ++t)
                        for (int j = 0; j < K; ++j)
                            gxc[t * st + j] += go[t] * W[wo + j];
                }
            }
            break;
        }
        case Kind::maxpool1d: {
            const auto& arg = cache.argmax[li];
            for (std::size_t i = 0; i < g.size(); ++i)
                gx.data[arg[i]] += g.data[i];
            break;
        }
        case Kind::upsample1d: {
            const int C = s.in_shape[0], Li = s.in_shape[1], f = s.spec.factor;
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < Li * f; ++t)
                    gx.data[static_cast<std::size_t>(c) * Li + t / f] += g.data[static_cast<std::size_t>(c) * Li * f + t];
            break;
        }
        case Kind::dense: {
            const int In = s.in_shape[0], Out = s.out_shape[0];
            const double* W = P + s.w_offset;
            double* gW = grad.data() + s.w_offset;
            double* gb = grad.data() + s.b_offset;
            for (int o = 0; o < Out; ++o) {
                const double go = g.data[o];
                gb[o] += go;
                const double* w = W + static_cast<std::size_t>(o) * In;
                double* gw = gW + static_cast<std::size_t>(o) * In;
                for (int i = 0; i < In; ++i) {
                    gw[i] += go * x.data[i];
                    gx.data[i] += go * w[i];
                }
            }
            break;
        }
        case Kind::relu:
            for (std::size_t i = 0; i < x.size(); ++i)
                gx.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
            break;
        case Kind::sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double sg = sigmoid_fn(x.data[i]);
                gx.data[i] = g.data[i] * sg * (1.0 - sg);
            }
            break;
        case Kind::flatten:
        case Kind::reshape: gx.data = g.data; break;
        }
        g = std::move(gx);
    }
    return g;
}

// ---- concat / split (multi-branch plumbing) ---------------------------------

inline Tensor concat(const std::vector<Tensor>& parts)
{
    std::vector<double> out;
    for (const auto& t : parts)
        out.insert(out.end(), t.data.begin(), t.data.end());
    if (out.empty())
        throw ShapeError("concat: no inputs");
    const int n = static_cast<int>(out.size());
    return Tensor({n}, std::move(out));
}

// Splits a flat tensor into consecutive pieces with the given shapes.
inline std::vector<Tensor> split(const Tensor& t, const std::vector<Shape>& shapes)
{
    std::size_t total = 0;
    for (const auto& s : shapes)
        total += shape_size(s);
    if (total != t.size())
        throw ShapeError("split: sizes do not add up to the input length");
    std::vector<Tensor> out;
    std::size_t off = 0;
    for (const auto& s : shapes) {
        const std::size_t n = shape_size(s);
        out.emplace_back(s, std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(off),
                                                t.data.begin() + static_cast<std::ptrdiff_t>(off + n)));
        off += n;
    }
    return out;
}

// ---- Adam ---------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const
    {
        if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
            throw ConfigError("adam: lr > 0, beta in [0,1), eps > 0 required");
    }
};

struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st, const AdamConfig& cfg)
{
    if (params.size() != grads.size())
        throw ShapeError("adam: params and grads differ in length");
    if (st.m.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    if (st.m.size() != params.size())
        throw ShapeError("adam: state length does not match params");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw NumericalError("adam: non-finite gradient at index " + std::to_string(i) + " (step " +
                                 std::to_string(st.step + 1) + ")");
    ++st.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mh = st.m[i] / c1;
        const double vh = st.v[i] / c2;
        params[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}

// ---- finite-difference check ----------------------------------------------------

struct LossProbe {
    long double loss = 0.0;
    std::uint64_t signature = 0;  // activation regime; 0 if the loss is smooth everywhere
};

struct GradCheckOptions {
    double eps = 1e-5;
    double fraction = 0.01;
    std::size_t min_coords = 50;
    std::uint64_t seed = 1;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation crossed a relu/maxpool kink
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central differences on a random subset of coordinates. `loss_fn` maps a
// full parameter vector to a LossProbe. Coordinates whose +/- eps
// perturbation changes the activation signature are skipped and replaced.
template <class LossFn>
GradCheckResult gradient_check(std::span<const double> params, std::span<const double> analytic, LossFn&& loss_fn,
                               const GradCheckOptions& opt = {})
{
    if (!(opt.eps >= 1e-7 && opt.eps <= 1e-3))
        throw ConfigError("gradient_check: eps must lie in [1e-7, 1e-3]");
    if (params.size() != analytic.size())
        throw ShapeError("gradient_check: params and analytic gradient differ in length");
    const std::size_t P = params.size();
    const std::size_t target =
        std::min(P, std::max(opt.min_coords, static_cast<std::size_t>(std::ceil(opt.fraction * static_cast<double>(P)))));
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(opt.seed);
    shuffle(order.begin(), order.end(), rng);

    std::vector<double> work(params.begin(), params.end());
    const std::uint64_t base_sig = loss_fn(std::span<const double>(work)).signature;
    GradCheckResult r;
    for (std::size_t idx : order) {
        if (r.checked >= target)
            break;
        const double orig = work[idx];
        work[idx] = orig + opt.eps;
        const LossProbe up = loss_fn(std::span<const double>(work));
        work[idx] = orig - opt.eps;
        const LossProbe dn = loss_fn(std::span<const double>(work));
        work[idx] = orig;
        if (up.signature != base_sig || dn.signature != base_sig) {
            ++r.skipped;
            continue;
        }
        const double num = static_cast<double>((up.loss - dn.loss) / (2.0L * opt.eps));
        const double ana = analytic[idx];
        const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
        if (err > r.max_rel_error || r.checked == 0) {
            r.max_rel_error = err;
            r.worst_index = idx;
            r.worst_analytic = ana;
            r.worst_numeric = num;
        }
        ++r.checked;
    }
    return r;
}

// ---- checkpoint -------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   bytes 0..7    magic "CCLCKPT1"
//   bytes 8..15   u64 H, length of the JSON header
//   next H bytes  UTF-8 JSON header (architecture, step, seeds, n_params, ...)
//   8 * n_params  IEEE-754 binary64 parameters, little-endian, flat order

inline constexpr char kCheckpointMagic[8] = {'C', 'C', 'L', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    nlohmann::json header;
    std::vector<double> params;
};

namespace detail {
inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_u64(const unsigned char* p)
{
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | p[i];
    return v;
}
} // namespace detail

inline std::string encode_checkpoint(const nlohmann::json& header, std::span<const double> params)
{
    nlohmann::json h = header;
    h["n_params"] = params.size();
    const std::string hs = h.dump();
    std::string out(kCheckpointMagic, 8);
    detail::put_u64(out, hs.size());
    out += hs;
    out.reserve(out.size() + 8 * params.size());
    for (double v : params)
        detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes)
{
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || std::memcmp(p, kCheckpointMagic, 8) != 0)
        throw ParseError("checkpoint: bad magic");
    const std::uint64_t hlen = detail::get_u64(p + 8);
    if (hlen > bytes.size() - 16)
        throw ParseError("checkpoint: header length exceeds file size");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: header: ") + e.what());
    }
    const std::uint64_t n = ck.header.value("n_params", std::uint64_t{0});
    const std::size_t body = bytes.size() - 16 - hlen;
    if (body != 8 * n)
        throw ParseError("checkpoint: parameter block has " + std::to_string(body) + " bytes, header declares " +
                         std::to_string(n) + " values");
    ck.params.resize(n);
    for (std::uint64_t i = 0; i < n; ++i)
        ck.params[i] = std::bit_cast<double>(detail::get_u64(p + 16 + hlen + 8 * i));
    for (double v : ck.params)
        if (!std::isfinite(v))
            throw ParseError("checkpoint: non-finite parameter");
    return ck;
}

inline void write_checkpoint(const std::string& path, const nlohmann::json& header, std::span<const double> params)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ParseError("cannot write " + path);
    const std::string bytes = encode_checkpoint(header, params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint read_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

} // namespace ccloc::nn

#endif // CCLOC_NN_HPP
