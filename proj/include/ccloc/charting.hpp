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

#ifndef CCLOC_CHARTING_HPP
#define CCLOC_CHARTING_HPP

// Convolutional channel-charting autoencoder: per-BS conv encoders fused
// into a 3-D sigmoid chart, a mirrored decoder, the three training losses,
// the interleaved semi-supervised schedule and both baselines.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccloc/dataset.hpp"
#include "ccloc/error.hpp"
#include "ccloc/nn.hpp"
#include "ccloc/random.hpp"
#include "ccloc/scene.hpp"

namespace ccloc::charting {

using nn::LayerSpec;
using nn::Net;
using nn::Tensor;
using scene::Vec3;

struct ArchConfig {
    std::vector<int> conv_channels{8, 16, 16};
    int kernel = 3;
    int pool = 2;
    int fused_width = 64;

    void validate() const
    {
        if (conv_channels.empty())
            throw ConfigError("model: conv_channels must not be empty");
        for (int c : conv_channels)
            if (c < 1)
                throw ConfigError("model: conv_channels entries must be >= 1");
        if (kernel < 1 || pool < 1 || fused_width < 1)
            throw ConfigError("model: kernel, pool and fused_width must be >= 1");
    }

    nlohmann::json to_json() const
    {
        return {{"conv_channels", conv_channels}, {"kernel", kernel}, {"pool", pool}, {"fused_width", fused_width}};
    }
    static ArchConfig from_json(const nlohmann::json& j)
    {
        ArchConfig a;
        a.conv_channels = j.at("conv_channels").get<std::vector<int>>();
        a.kernel = j.at("kernel").get<int>();
        a.pool = j.at("pool").get<int>();
        a.fused_width = j.at("fused_width").get<int>();
        return a;
    }

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// Flat parameter layout:
//   [encoder branch 0..B-1 | encoder fusion | decoder fusion | decoder branch 0..B-1]
// The encoder block (Omega) precedes the decoder block (Theta).
class ChartModel {
public:
    struct EncCache {
        std::vector<nn::Cache> branch;
        nn::Cache fusion;
    };
    struct DecCache {
        nn::Cache fusion;
        std::vector<nn::Cache> branch;
    };

    ChartModel() = default;
    ChartModel(int n_bs, int feature_len, ArchConfig arch = {}) : n_bs_(n_bs), feat_(feature_len), arch_(std::move(arch))
    {
        arch_.validate();
        if (n_bs < 1 || feature_len < 1)
            throw ConfigError("model: need n_bs >= 1 and feature_len >= 1");
        const auto& ch = arch_.conv_channels;
        const int K = arch_.kernel, S = arch_.pool;

        std::vector<LayerSpec> enc;
        for (int c : ch) {
            enc.push_back(LayerSpec::conv1d(c, K));
            enc.push_back(LayerSpec::relu());
            enc.push_back(LayerSpec::maxpool1d(S));
        }
        enc.push_back(LayerSpec::flatten());
        enc_branch_ = Net({1, feat_}, enc);
        const int flat = enc_branch_.output_shape()[0];
        enc_fusion_ = Net({n_bs_ * flat}, {LayerSpec::dense(arch_.fused_width), LayerSpec::relu(), LayerSpec::dense(3),
                                          LayerSpec::sigmoid()});

        // Decoder seed length: smallest n0 for which the mirrored
        // (upsample, conv) stages can end exactly on feature_len with a final
        // kernel no narrower than the encoder's.
        int n0 = 1, k_last = 0;
        for (;; ++n0) {
            int len = n0;
            for (std::size_t i = 0; i + 1 < ch.size(); ++i)
                len = len * S - (K - 1);
            if (len < 1)
                continue;
            len *= S;
            if (len - feat_ + 1 >= K) {
                k_last = len - feat_ + 1;
                break;
            }
            if (n0 > 4 * feat_ + 64)
                throw ConfigError("model: cannot fit a decoder to feature_len " + std::to_string(feat_));
        }
        seed_shape_ = {ch.back(), n0};
        dec_fusion_ = Net({3}, {LayerSpec::dense(arch_.fused_width), LayerSpec::relu(),
                                LayerSpec::dense(n_bs_ * ch.back() * n0), LayerSpec::relu()});
        std::vector<LayerSpec> dec;
        for (std::size_t i = ch.size() - 1; i > 0; --i) {
            dec.push_back(LayerSpec::upsample1d(S));
            dec.push_back(LayerSpec::conv1d(ch[i - 1], K));
            dec.push_back(LayerSpec::relu());
        }
        dec.push_back(LayerSpec::upsample1d(S));
        dec.push_back(LayerSpec::conv1d(1, k_last));
        dec.push_back(LayerSpec::flatten());
        dec_branch_ = Net(seed_shape_, dec);
        if (dec_branch_.output_shape()[0] != feat_)
            throw ShapeError("model: decoder output length mismatch");

        std::size_t off = 0;
        for (int b = 0; b < n_bs_; ++b) {
            enc_branch_off_.push_back(off);
            off += enc_branch_.n_params();
        }
        enc_fusion_off_ = off;
        off += enc_fusion_.n_params();
        n_enc_ = off;
        dec_fusion_off_ = off;
        off += dec_fusion_.n_params();
        for (int b = 0; b < n_bs_; ++b) {
            dec_branch_off_.push_back(off);
            off += dec_branch_.n_params();
        }
        params_ = nn::Params(off);
        for (const auto& s : enc_fusion_.slots())
            if (s.spec.kind == nn::Kind::dense)
                fc_ranges_.push_back({enc_fusion_off_ + s.w_offset, s.w_count});
    }

    int n_bs() const { return n_bs_; }
    int feature_len() const { return feat_; }
    int input_size() const { return n_bs_ * feat_; }
    const ArchConfig& arch() const { return arch_; }
    std::size_t n_params() const { return params_.size(); }
    std::size_t n_encoder_params() const { return n_enc_; }
    std::size_t n_decoder_params() const { return params_.size() - n_enc_; }
    nn::Params& params() { return params_; }
    const nn::Params& params() const { return params_; }
    // (offset, count) ranges of the encoder's fully connected weights.
    const std::vector<std::pair<std::size_t, std::size_t>>& fc_weight_ranges() const { return fc_ranges_; }

    void init(std::uint64_t seed)
    {
        auto all = params_.mutable_view();
        for (int b = 0; b < n_bs_; ++b) {
            Rng r(derive_seed(seed, {0xe1c, static_cast<std::uint64_t>(b)}));
            nn::init_params(enc_branch_, all.subspan(enc_branch_off_[b], enc_branch_.n_params()), r);
        }
        Rng rf(derive_seed(seed, {0xe1f}));
        nn::init_params(enc_fusion_, all.subspan(enc_fusion_off_, enc_fusion_.n_params()), rf);
        Rng rd(derive_seed(seed, {0xdef}));
        nn::init_params(dec_fusion_, all.subspan(dec_fusion_off_, dec_fusion_.n_params()), rd);
        for (int b = 0; b < n_bs_; ++b) {
            Rng r(derive_seed(seed, {0xdec, static_cast<std::uint64_t>(b)}));
            nn::init_params(dec_branch_, all.subspan(dec_branch_off_[b], dec_branch_.n_params()), r);
        }
    }

    // x: B * feature_len normalized features -> chart point in (0,1)^3.
    Vec3 encode(std::span<const double> x, EncCache* cache = nullptr) const
    {
        if (static_cast<int>(x.size()) != input_size())
            throw ShapeError("encode: expected " + std::to_string(input_size()) + " features, got " +
                             std::to_string(x.size()));
        std::vector<Tensor> parts;
        if (cache)
            cache->branch.assign(static_cast<std::size_t>(n_bs_), nn::Cache{});
        for (int b = 0; b < n_bs_; ++b) {
            Tensor in({1, feat_}, std::vector<double>(x.begin() + b * feat_, x.begin() + (b + 1) * feat_));
            parts.push_back(nn::forward(enc_branch_, view(enc_branch_off_[b], enc_branch_), in,
                                        cache ? &cache->branch[b] : nullptr));
        }
        const Tensor z = nn::forward(enc_fusion_, view(enc_fusion_off_, enc_fusion_), nn::concat(parts),
                                     cache ? &cache->fusion : nullptr);
        return {z[0], z[1], z[2]};
    }

    // Chart point -> B * feature_len normalized features.
    std::vector<double> decode(const Vec3& z, DecCache* cache = nullptr) const
    {
        if (cache)
            cache->branch.assign(static_cast<std::size_t>(n_bs_), nn::Cache{});
        const Tensor h = nn::forward(dec_fusion_, view(dec_fusion_off_, dec_fusion_), Tensor({3}, {z[0], z[1], z[2]}),
                                     cache ? &cache->fusion : nullptr);
        const auto seeds = nn::split(h, std::vector<nn::Shape>(static_cast<std::size_t>(n_bs_), seed_shape_));
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(input_size()));
        for (int b = 0; b < n_bs_; ++b) {
            const Tensor y = nn::forward(dec_branch_, view(dec_branch_off_[b], dec_branch_), seeds[b],
                                         cache ? &cache->branch[b] : nullptr);
            out.insert(out.end(), y.data.begin(), y.data.end());
        }
        return out;
    }

    std::vector<double> autoencode(std::span<const double> x) const { return decode(encode(x)); }

    // Accumulate gradients into `grad` (full model length).
    void encode_backward(const EncCache& c, const Vec3& g_out, std::span<double> grad) const
    {
        const Tensor gin = nn::backward(enc_fusion_, view(enc_fusion_off_, enc_fusion_), c.fusion,
                                        Tensor({3}, {g_out[0], g_out[1], g_out[2]}),
                                        grad.subspan(enc_fusion_off_, enc_fusion_.n_params()));
        const auto parts =
            nn::split(gin, std::vector<nn::Shape>(static_cast<std::size_t>(n_bs_), enc_branch_.output_shape()));
        for (int b = 0; b < n_bs_; ++b)
            nn::backward(enc_branch_, view(enc_branch_off_[b], enc_branch_), c.branch[b], parts[b],
                         grad.subspan(enc_branch_off_[b], enc_branch_.n_params()));
    }

    // Returns d/dz of the loss.
    Vec3 decode_backward(const DecCache& c, std::span<const double> g_out, std::span<double> grad) const
    {
        if (static_cast<int>(g_out.size()) != input_size())
            throw ShapeError("decode_backward: gradient length mismatch");
        std::vector<Tensor> gseeds;
        for (int b = 0; b < n_bs_; ++b) {
            Tensor g({feat_}, std::vector<double>(g_out.begin() + b * feat_, g_out.begin() + (b + 1) * feat_));
            gseeds.push_back(nn::backward(dec_branch_, view(dec_branch_off_[b], dec_branch_), c.branch[b], g,
                                          grad.subspan(dec_branch_off_[b], dec_branch_.n_params())));
        }
        const Tensor gz = nn::backward(dec_fusion_, view(dec_fusion_off_, dec_fusion_), c.fusion, nn::concat(gseeds),
                                       grad.subspan(dec_fusion_off_, dec_fusion_.n_params()));
        return {gz[0], gz[1], gz[2]};
    }

    // Squared Frobenius norm of the encoder FC weights; optionally adds
    // lambda * w to `grad`.
    long double fc_norm2(double lambda = 0.0, std::span<double> grad = {}) const
    {
        const auto v = params_.view();
        long double s = 0.0;
        for (const auto& [off, n] : fc_ranges_)
            for (std::size_t i = off; i < off + n; ++i) {
                s += static_cast<long double>(v[i]) * v[i];
                if (!grad.empty())
                    grad[i] += lambda * v[i];
            }
        return s;
    }

    // Relu/maxpool regime of the last forward passes in the caches.
    static std::uint64_t signature(const EncCache* e, const DecCache* d, std::uint64_t h)
    {
        if (e) {
            for (const auto& c : e->branch)
                h = nn::activation_signature(c, h);
            h = nn::activation_signature(e->fusion, h);
        }
        if (d) {
            h = nn::activation_signature(d->fusion, h);
            for (const auto& c : d->branch)
                h = nn::activation_signature(c, h);
        }
        return h;
    }

    nlohmann::json describe() const
    {
        return {{"n_bs", n_bs_},
                {"feature_len", feat_},
                {"arch", arch_.to_json()},
                {"encoder_branch", enc_branch_.to_json()},
                {"encoder_fusion", enc_fusion_.to_json()},
                {"decoder_fusion", dec_fusion_.to_json()},
                {"decoder_branch", dec_branch_.to_json()},
                {"n_encoder_params", n_enc_},
                {"n_params", params_.size()}};
    }
    std::string architecture_hash() const { return scene::hex64(scene::fnv1a(describe().dump())); }

private:
    nn::ParamView view(std::size_t off, const Net& net) const { return nn::view_of(params_, off, net.n_params()); }

    int n_bs_ = 0, feat_ = 0;
    ArchConfig arch_;
    Net enc_branch_, enc_fusion_, dec_fusion_, dec_branch_;
    nn::Shape seed_shape_;
    std::vector<std::size_t> enc_branch_off_, dec_branch_off_;
    std::size_t enc_fusion_off_ = 0, dec_fusion_off_ = 0, n_enc_ = 0;
    std::vector<std::pair<std::size_t, std::size_t>> fc_ranges_;
    nn::Params params_;
};

// ---- losses -----------------------------------------------------------------------

struct Example {
    std::span<const double> x;      // normalized features
    std::optional<Vec3> y;          // normalized label
};

// Values are accumulated in extended precision: a double sum of order 1e2
// cannot resolve the ~1e-12 changes a finite-difference probe needs.
struct LossResult {
    long double value = 0.0;
    long double data_term = 0.0;
    std::vector<double> grad;       // full model length; empty unless requested
    std::uint64_t signature = 0;
};

namespace detail {
inline void require_labels(const std::vector<Example>& batch, const char* who)
{
    if (batch.empty())
        throw ContractError(std::string(who) + ": empty batch");
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (!batch[i].y)
            throw ContractError(std::string(who) + ": batch entry " + std::to_string(i) + " has no label");
}
} // namespace detail

// (1/2m) sum ||x - D(C(x))||^2 + (lambda/2) ||Omega_FC||^2
inline LossResult loss_unsupervised(const ChartModel& m, const std::vector<Example>& batch, double lambda,
                                    bool want_grad = true)
{
    if (batch.empty())
        throw ContractError("loss_unsupervised: empty batch");
    LossResult r;
    if (want_grad)
        r.grad.assign(m.n_params(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::uint64_t sig = 0x51e;
    ChartModel::EncCache ec;
    ChartModel::DecCache dc;
    for (const auto& ex : batch) {
        const Vec3 z = m.encode(ex.x, &ec);
        const auto xh = m.decode(z, &dc);
        std::vector<double> g(xh.size());
        long double s = 0.0;
        for (std::size_t i = 0; i < xh.size(); ++i) {
            const long double d = static_cast<long double>(xh[i]) - ex.x[i];
            s += d * d;
            g[i] = (xh[i] - ex.x[i]) * inv;
        }
        r.data_term += 0.5L * inv * s;
        sig = ChartModel::signature(&ec, &dc, sig);
        if (want_grad) {
            const Vec3 gz = m.decode_backward(dc, g, r.grad);
            m.encode_backward(ec, gz, r.grad);
        }
    }
    r.value = r.data_term + 0.5L * lambda * m.fc_norm2(lambda, want_grad ? std::span<double>(r.grad) : std::span<double>{});
    r.signature = sig;
    return r;
}

// (1/2m) sum ||y - C(x)||^2 + (lambda/2) ||Omega_FC||^2
inline LossResult loss_encoder(const ChartModel& m, const std::vector<Example>& batch, double lambda,
                               bool want_grad = true)
{
    detail::require_labels(batch, "loss_encoder");
    LossResult r;
    if (want_grad)
        r.grad.assign(m.n_params(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::uint64_t sig = 0xe7c;
    ChartModel::EncCache ec;
    for (const auto& ex : batch) {
        const Vec3 yt = m.encode(ex.x, &ec);
        const Vec3 d = yt - *ex.y;
        long double s = 0.0;
        for (int k = 0; k < 3; ++k) {
            const long double dk = static_cast<long double>(yt[k]) - (*ex.y)[k];
            s += dk * dk;
        }
        r.data_term += 0.5L * inv * s;
        sig = ChartModel::signature(&ec, nullptr, sig);
        if (want_grad)
            m.encode_backward(ec, d * inv, r.grad);
    }
    r.value = r.data_term + 0.5L * lambda * m.fc_norm2(lambda, want_grad ? std::span<double>(r.grad) : std::span<double>{});
    r.signature = sig;
    return r;
}

// (1/m) sum ||x - D(y)||^2   (no half, no regularizer)
inline LossResult loss_decoder(const ChartModel& m, const std::vector<Example>& batch, bool want_grad = true)
{
    detail::require_labels(batch, "loss_decoder");
    LossResult r;
    if (want_grad)
        r.grad.assign(m.n_params(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::uint64_t sig = 0xdec;
    ChartModel::DecCache dc;
    for (const auto& ex : batch) {
        const auto xh = m.decode(*ex.y, &dc);
        std::vector<double> g(xh.size());
        long double s = 0.0;
        for (std::size_t i = 0; i < xh.size(); ++i) {
            const long double d = static_cast<long double>(xh[i]) - ex.x[i];
            s += d * d;
            g[i] = 2.0 * (xh[i] - ex.x[i]) * inv;
        }
        r.data_term += inv * s;
        sig = ChartModel::signature(nullptr, &dc, sig);
        if (want_grad)
            m.decode_backward(dc, g, r.grad);
    }
    r.value = r.data_term;
    r.signature = sig;
    return r;
}

// ---- training ---------------------------------------------------------------------

enum class Mode { semi, unsup, sup };

inline std::string to_string(Mode m)
{
    switch (m) {
    case Mode::semi: return "semi";
    case Mode::unsup: return "unsup";
    case Mode::sup: return "sup";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s)
{
    if (s == "semi")
        return Mode::semi;
    if (s == "unsup")
        return Mode::unsup;
    if (s == "sup")
        return Mode::sup;
    throw ConfigError("unknown training mode '" + s + "' (expected semi, unsup or sup)");
}

struct TrainConfig {
    int epochs = 20;
    int batch_labeled = 15;     // B_l
    int batch_unlabeled = 0;    // B_u; 0 derives floor(U_train / N)
    double lambda_reg = 1e-4;
    nn::AdamConfig adam;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (epochs < 1)
            throw ConfigError("train: epochs must be >= 1");
        if (batch_labeled < 1 || batch_unlabeled < 0)
            throw ConfigError("train: batch sizes must be >= 1");
        if (!(lambda_reg >= 0.0))
            throw ConfigError("train: lambda_reg must be >= 0");
        adam.validate();
    }
};

// Normalized training tensors.
struct TrainData {
    std::vector<std::vector<double>> unlabeled_x;
    std::vector<std::vector<double>> labeled_x;
    std::vector<Vec3> labeled_y;
};

inline TrainData make_train_data(const dataset::Dataset& ds)
{
    if (!ds.has_split)
        throw StateError("make_train_data: dataset has no split");
    ds.scaler.require_fitted();
    TrainData d;
    for (int i : ds.split.unlabeled_train)
        d.unlabeled_x.push_back(ds.scaler.apply_features(ds.unlabeled[static_cast<std::size_t>(i)].features));
    for (int i : ds.split.labeled_train) {
        const auto& s = ds.labeled[static_cast<std::size_t>(i)];
        d.labeled_x.push_back(ds.scaler.apply_features(s.features));
        d.labeled_y.push_back(ds.scaler.apply_label(*s.label));
    }
    return d;
}

struct Schedule {
    int steps_per_epoch = 0;  // N
    int batch_unlabeled = 0;  // B_u
    int batch_labeled = 0;    // B_l
};

// N aligned minibatch pairs per epoch: N = floor(J_train / B_l) and
// B_u = floor(U_train / N) unless given; leftovers are dropped each epoch.
inline Schedule make_schedule(std::size_t n_unlabeled, std::size_t n_labeled, const TrainConfig& cfg)
{
    Schedule s;
    s.batch_labeled = cfg.batch_labeled;
    if (n_labeled > 0) {
        s.steps_per_epoch = static_cast<int>(n_labeled / static_cast<std::size_t>(cfg.batch_labeled));
        if (s.steps_per_epoch < 1)
            throw ConfigError("train: batch_labeled exceeds the labeled training set");
        if (cfg.batch_unlabeled > 0) {
            s.batch_unlabeled = cfg.batch_unlabeled;
            s.steps_per_epoch =
                std::min<int>(s.steps_per_epoch, static_cast<int>(n_unlabeled / static_cast<std::size_t>(cfg.batch_unlabeled)));
        } else {
            s.batch_unlabeled = static_cast<int>(n_unlabeled / static_cast<std::size_t>(s.steps_per_epoch));
        }
    } else {
        if (cfg.batch_unlabeled < 1)
            throw ConfigError("train: batch_unlabeled is required without labeled data");
        s.batch_unlabeled = cfg.batch_unlabeled;
        s.steps_per_epoch = static_cast<int>(n_unlabeled / static_cast<std::size_t>(cfg.batch_unlabeled));
    }
    if (s.steps_per_epoch < 1 || (n_unlabeled > 0 && s.batch_unlabeled < 1))
        throw ConfigError("train: not enough data for one minibatch pair");
    return s;
}

struct StepLog {
    int epoch = 0;
    int step = 0;
    double e = std::numeric_limits<double>::quiet_NaN();    // unsupervised loss
    double e_enc = std::numeric_limits<double>::quiet_NaN();
    double e_dec = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
    Mode mode = Mode::semi;
    Schedule schedule;
    std::vector<StepLog> steps;
};

struct Optimizers {
    nn::AdamState autoenc, enc, dec;
};

namespace detail {

inline void check_finite(double v, const char* what, int epoch, int step)
{
    if (!std::isfinite(v))
        throw NumericalError(std::string("train: non-finite ") + what + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step));
}

inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t tag, int epoch)
{
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i)
        p[i] = i;
    Rng rng(derive_seed(seed, {0x5c4ed, tag, static_cast<std::uint64_t>(epoch)}));
    shuffle(p.begin(), p.end(), rng);
    return p;
}

} // namespace detail

// Runs the paired schedule. Stage flags select the mode:
//   semi  : E over (Omega, Theta), E_e over Omega, E_d over Theta
//   unsup : E only
//   sup   : E_e only
// Each stage has its own Adam state. Shuffles depend only on (seed, epoch),
// so all modes see the same minibatch sequence.
inline TrainLog train(ChartModel& model, const TrainData& data, const TrainConfig& cfg, Mode mode,
                      Optimizers* opt_state = nullptr)
{
    cfg.validate();
    // semi without labeled rows degenerates to unsup.
    const bool use_u = mode != Mode::sup;
    const bool use_l = mode == Mode::sup || (mode == Mode::semi && !data.labeled_x.empty());
    if (use_u && data.unlabeled_x.empty())
        throw ContractError("train: mode " + to_string(mode) + " needs unlabeled data");
    if (mode == Mode::sup && data.labeled_x.empty())
        throw ContractError("train: mode sup needs labeled data");
    if (data.labeled_x.size() != data.labeled_y.size())
        throw ShapeError("train: labeled features and labels differ in count");

    TrainLog log;
    log.mode = mode;
    log.schedule = make_schedule(data.unlabeled_x.size(), data.labeled_x.size(), cfg);
    const Schedule& S = log.schedule;
    Optimizers local;
    Optimizers& opt = opt_state ? *opt_state : local;
    const std::size_t n_enc = model.n_encoder_params();
    const std::size_t n_all = model.n_params();

    for (int ep = 0; ep < cfg.epochs; ++ep) {
        const auto pu = detail::permutation(data.unlabeled_x.size(), cfg.seed, 1, ep);
        const auto pl = detail::permutation(data.labeled_x.size(), cfg.seed, 2, ep);
        for (int i = 0; i < S.steps_per_epoch; ++i) {
            StepLog sl;
            sl.epoch = ep;
            sl.step = static_cast<int>(log.steps.size());
            if (use_u) {
                std::vector<Example> bu;
                for (int k = 0; k < S.batch_unlabeled; ++k)
                    bu.push_back({data.unlabeled_x[pu[static_cast<std::size_t>(i * S.batch_unlabeled + k)]], std::nullopt});
                const auto r = loss_unsupervised(model, bu, cfg.lambda_reg);
                detail::check_finite(r.value, "E", ep, sl.step);
                sl.e = r.value;
                nn::adam_step(model.params().mutable_view().subspan(0, n_all), r.grad, opt.autoenc, cfg.adam);
            }
            if (use_l) {
                std::vector<Example> bl;
                for (int k = 0; k < S.batch_labeled; ++k) {
                    const std::size_t j = pl[static_cast<std::size_t>(i * S.batch_labeled + k)];
                    bl.push_back({data.labeled_x[j], data.labeled_y[j]});
                }
                const auto re = loss_encoder(model, bl, cfg.lambda_reg);
                detail::check_finite(re.value, "E_e", ep, sl.step);
                sl.e_enc = re.value;
                nn::adam_step(model.params().mutable_view().subspan(0, n_enc),
                              std::span<const double>(re.grad).subspan(0, n_enc), opt.enc, cfg.adam);
                if (mode == Mode::semi) {
                    const auto rd = loss_decoder(model, bl);
                    detail::check_finite(rd.value, "E_d", ep, sl.step);
                    sl.e_dec = rd.value;
                    nn::adam_step(model.params().mutable_view().subspan(n_enc),
                                  std::span<const double>(rd.grad).subspan(n_enc), opt.dec, cfg.adam);
                }
            }
            log.steps.push_back(sl);
        }
    }
    return log;
}

inline TrainLog train_semisupervised(ChartModel& m, const TrainData& d, const TrainConfig& c) { return train(m, d, c, Mode::semi); }
inline TrainLog train_unsupervised_baseline(ChartModel& m, const TrainData& d, const TrainConfig& c) { return train(m, d, c, Mode::unsup); }
inline TrainLog train_supervised_baseline(ChartModel& m, const TrainData& d, const TrainConfig& c) { return train(m, d, c, Mode::sup); }

// ---- inference ----------------------------------------------------------------------

// Features that went through a fitted scaler; the fingerprint ties them to it.
struct NormalizedFeatures {
    std::vector<double> values;
    std::string scaler_fingerprint;
};

inline NormalizedFeatures normalize(const dataset::Scaler& sc, const dataset::Sample& s)
{
    return {sc.apply_features(s.features), sc.fingerprint()};
}

inline Vec3 predict_location(const ChartModel& m, const dataset::Scaler& sc, const NormalizedFeatures& x)
{
    sc.require_fitted();
    if (x.scaler_fingerprint != sc.fingerprint())
        throw ContractError("predict_location: features were not normalized with this scaler");
    return sc.invert_label(m.encode(x.values));
}

inline std::vector<Vec3> predict_locations(const ChartModel& m, const dataset::Scaler& sc,
                                           const std::vector<NormalizedFeatures>& xs)
{
    sc.require_fitted();
    const std::string fp = sc.fingerprint();
    std::vector<Vec3> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
        if (x.scaler_fingerprint != fp)
            throw ContractError("predict_location: features were not normalized with this scaler");
        out.push_back(sc.invert_label(m.encode(x.values)));
    }
    return out;
}

struct CsiPrediction {
    std::vector<double> normalized;                 // decoder output, B * 5L
    std::vector<std::vector<double>> features;      // de-normalized, B rows of 5L
    bool outside_bounds = false;
};

inline CsiPrediction predict_csi(const ChartModel& m, const dataset::Scaler& sc, const Vec3& location)
{
    sc.require_fitted();
    CsiPrediction p;
    for (int i = 0; i < 3; ++i)
        if (location[i] < sc.box_lo[i] || location[i] > sc.box_hi[i])
            p.outside_bounds = true;
    p.normalized = m.decode(sc.apply_label(location));
    const auto flat = sc.invert_features(p.normalized);
    const int F = m.feature_len();
    for (int b = 0; b < m.n_bs(); ++b)
        p.features.emplace_back(flat.begin() + b * F, flat.begin() + (b + 1) * F);
    return p;
}

// ---- model files --------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline void save_model(const std::string& path, const ChartModel& m, const dataset::Scaler& sc,
                       nlohmann::json extra = nlohmann::json::object())
{
    nlohmann::json h = std::move(extra);
    h["format"] = "ccloc.model";
    h["format_version"] = kModelFormatVersion;
    h["architecture"] = m.describe();
    h["architecture_hash"] = m.architecture_hash();
    h["scaler"] = dataset::scaler_to_json(sc);
    nn::write_checkpoint(path, h, m.params().view());
}

struct LoadedModel {
    ChartModel model;
    dataset::Scaler scaler;
    nlohmann::json header;
};

inline LoadedModel load_model(const std::string& path)
{
    auto ck = nn::read_checkpoint(path);
    const auto& h = ck.header;
    try {
        if (h.at("format").get<std::string>() != "ccloc.model" || h.at("format_version").get<int>() != kModelFormatVersion)
            throw ParseError("unsupported model format");
        const auto& a = h.at("architecture");
        LoadedModel lm{ChartModel(a.at("n_bs").get<int>(), a.at("feature_len").get<int>(),
                                  ArchConfig::from_json(a.at("arch"))),
                       dataset::scaler_from_json(h.at("scaler")), h};
        if (lm.model.architecture_hash() != h.at("architecture_hash").get<std::string>())
            throw ParseError("architecture hash mismatch");
        lm.model.params().assign(ck.params);
        return lm;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

} // namespace ccloc::charting

#endif // CCLOC_CHARTING_HPP
