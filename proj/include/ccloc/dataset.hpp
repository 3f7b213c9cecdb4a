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

#ifndef CCLOC_DATASET_HPP
#define CCLOC_DATASET_HPP

// Labeled / unlabeled CSI datasets: generation over a scene, per-subset
// train/test splits, feature/label normalization and the JSON-lines
// on-disk format (manifest.json + samples.jsonl).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "ccloc/csi.hpp"
#include "ccloc/error.hpp"
#include "ccloc/random.hpp"
#include "ccloc/scene.hpp"

namespace ccloc::dataset {

using scene::Vec3;

inline constexpr int kFormatVersion = 1;
inline constexpr double kLabelLo = 0.05;
inline constexpr double kLabelHi = 0.95;

struct Sample {
    std::int64_t ue_id = 0;
    std::vector<std::vector<double>> features;  // B rows of 5L
    std::vector<std::vector<bool>> mask;        // B rows of L
    std::optional<Vec3> label;                  // present iff labeled
    Vec3 position = Vec3::Zero();               // simulator ground truth, evaluation only

    int n_bs() const { return static_cast<int>(features.size()); }

    friend bool operator==(const Sample& a, const Sample& b)
    {
        return a.ue_id == b.ue_id && a.features == b.features && a.mask == b.mask && a.label == b.label &&
               a.position == b.position;
    }
};

struct Split {
    std::vector<int> labeled_train, labeled_test;
    std::vector<int> unlabeled_train, unlabeled_test;

    friend bool operator==(const Split&, const Split&) = default;
};

// Per-column standardization of the flattened B x 5L features plus an
// affine map of the scene box onto [0.05, 0.95]^3 for labels.
struct Scaler {
    bool fitted = false;
    std::vector<double> mean;
    std::vector<double> scale;  // 0 marks a constant column
    Vec3 box_lo = Vec3::Zero();
    Vec3 box_hi = Vec3::Ones();

    void require_fitted() const
    {
        if (!fitted)
            throw StateError("scaler used before fit");
    }

    std::vector<double> apply_features(const std::vector<std::vector<double>>& rows) const
    {
        require_fitted();
        std::vector<double> out;
        out.reserve(mean.size());
        for (const auto& r : rows)
            out.insert(out.end(), r.begin(), r.end());
        if (out.size() != mean.size())
            throw ShapeError("scaler: feature size does not match the fitted layout");
        for (std::size_t c = 0; c < out.size(); ++c)
            out[c] = scale[c] == 0.0 ? 0.0 : (out[c] - mean[c]) / scale[c];
        return out;
    }

    std::vector<double> invert_features(const std::vector<double>& z) const
    {
        require_fitted();
        if (z.size() != mean.size())
            throw ShapeError("scaler: feature size does not match the fitted layout");
        std::vector<double> out(z.size());
        for (std::size_t c = 0; c < z.size(); ++c)
            out[c] = scale[c] == 0.0 ? mean[c] : z[c] * scale[c] + mean[c];
        return out;
    }

    Vec3 apply_label(const Vec3& y) const
    {
        require_fitted();
        Vec3 out;
        for (int i = 0; i < 3; ++i)
            out[i] = kLabelLo + (kLabelHi - kLabelLo) * (y[i] - box_lo[i]) / (box_hi[i] - box_lo[i]);
        return out;
    }

    Vec3 invert_label(const Vec3& t) const
    {
        require_fitted();
        Vec3 out;
        for (int i = 0; i < 3; ++i)
            out[i] = box_lo[i] + (t[i] - kLabelLo) / (kLabelHi - kLabelLo) * (box_hi[i] - box_lo[i]);
        return out;
    }

    std::string fingerprint() const;

    friend bool operator==(const Scaler&, const Scaler&) = default;
};

struct Dataset {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;
    Split split;
    bool has_split = false;
    Scaler scaler;
    nlohmann::json manifest = nlohmann::json::object();

    int n_bs() const
    {
        if (!labeled.empty())
            return labeled.front().n_bs();
        return unlabeled.empty() ? 0 : unlabeled.front().n_bs();
    }
    int max_paths() const
    {
        const Sample* s = !labeled.empty() ? &labeled.front() : (!unlabeled.empty() ? &unlabeled.front() : nullptr);
        return s && !s->mask.empty() ? static_cast<int>(s->mask.front().size()) : 0;
    }
};

// ---- generation -------------------------------------------------------------

struct BuildReport {
    int resampled = 0;         // UE draws rejected as disconnected from every BS
    int los_links = 0;
    int connected_links = 0;
    int total_links = 0;
    int low_confidence_links = 0;
    int rank_deficient_links = 0;
};

namespace detail {

struct UeResult {
    Sample sample;
    int resampled = 0;
    int los = 0, connected = 0, low_conf = 0, rank_def = 0;
};

inline UeResult build_one(const scene::Scene& sc, const array::Codebook& cb, const csi::PilotConfig& pilot,
                          std::uint64_t seed, std::int64_t ue_id)
{
    UeResult r;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 10000)
            throw ConfigError("dataset: could not place a connected UE after 10000 draws");
        Rng rng(derive_seed(seed, {0x75e, static_cast<std::uint64_t>(ue_id), static_cast<std::uint64_t>(attempt)}));
        const Vec3 pos = scene::sample_ue_position(sc, rng);
        std::vector<scene::PathSet> paths;
        bool any = false;
        for (const auto& bs : sc.base_stations) {
            paths.push_back(scene::compute_paths(sc, bs.id, pos, pilot.max_paths));
            any = any || paths.back().connected();
        }
        if (!any) {
            ++r.resampled;
            continue;
        }
        Sample s;
        s.ue_id = ue_id;
        s.position = pos;
        for (std::size_t b = 0; b < sc.base_stations.size(); ++b) {
            const auto& bs = sc.base_stations[b];
            const auto est = csi::estimate_link(paths[b], cb, pilot, bs.array, sc.ue_array,
                                                derive_seed(seed, {0x11c, static_cast<std::uint64_t>(ue_id),
                                                                   static_cast<std::uint64_t>(attempt),
                                                                   static_cast<std::uint64_t>(bs.id)}));
            s.features.push_back(est.feature.flatten());
            s.mask.push_back(est.feature.valid);
            r.los += paths[b].los;
            r.connected += paths[b].connected();
            r.low_conf += est.diag.low_confidence;
            r.rank_def += est.diag.rank_deficient;
        }
        r.sample = std::move(s);
        return r;
    }
}

// Runs f(i) for i in [0, n) on `jobs` threads; results are written by index
// so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f)
{
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i)
            f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load())
                    return;
                try {
                    f(i);
                } catch (...) {
                    if (!failed.exchange(true))
                        error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace detail

// UEs 0..J-1 are labeled, J..J+U-1 unlabeled. Deterministic under `seed`
// for any `jobs`.
inline Dataset build_dataset(const scene::Scene& sc, int n_labeled, int n_unlabeled, const csi::PilotConfig& pilot,
                             std::uint64_t seed, int jobs = 1, BuildReport* report = nullptr)
{
    if (n_labeled < 1 || n_unlabeled < 1)
        throw ConfigError("dataset: n_labeled and n_unlabeled must be >= 1");
    pilot.validate();
    const auto cb = array::make_codebook(pilot.n_codewords, sc.ue_array.n_elements);
    const std::size_t n = static_cast<std::size_t>(n_labeled) + static_cast<std::size_t>(n_unlabeled);
    std::vector<detail::UeResult> results(n);
    detail::parallel_for(n, jobs, [&](std::size_t i) {
        results[i] = detail::build_one(sc, cb, pilot, seed, static_cast<std::int64_t>(i));
    });

    Dataset ds;
    BuildReport rep;
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = results[i];
        rep.resampled += r.resampled;
        rep.los_links += r.los;
        rep.connected_links += r.connected;
        rep.low_confidence_links += r.low_conf;
        rep.rank_deficient_links += r.rank_def;
        rep.total_links += static_cast<int>(sc.base_stations.size());
        if (i < static_cast<std::size_t>(n_labeled)) {
            r.sample.label = r.sample.position;
            ds.labeled.push_back(std::move(r.sample));
        } else {
            ds.unlabeled.push_back(std::move(r.sample));
        }
    }
    ds.manifest = {{"format_version", kFormatVersion},
                   {"scene_hash", scene::scene_hash(sc)},
                   {"n_labeled", n_labeled},
                   {"n_unlabeled", n_unlabeled},
                   {"max_paths", pilot.max_paths},
                   {"n_bs", static_cast<int>(sc.base_stations.size())},
                   {"seed", seed},
                   {"codeword_index_base", 0},
                   {"ue_boresight", sc.ue_boresight},
                   {"resampled_ues", rep.resampled}};
    ds.scaler.box_lo = sc.bounds.lo;
    ds.scaler.box_hi = sc.bounds.hi;
    if (report)
        *report = rep;
    return ds;
}

// Shuffled per-subset split; floor(n * fraction) samples go to train.
inline void split(Dataset& ds, double train_fraction, std::uint64_t seed)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split: train_fraction must lie in (0, 1)");
    auto one = [&](std::size_t n, std::uint64_t tag, std::vector<int>& train, std::vector<int>& test) {
        std::vector<int> idx(n);
        for (std::size_t i = 0; i < n; ++i)
            idx[i] = static_cast<int>(i);
        Rng rng(derive_seed(seed, {0x5b1, tag}));
        shuffle(idx.begin(), idx.end(), rng);
        const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
        train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    };
    one(ds.labeled.size(), 1, ds.split.labeled_train, ds.split.labeled_test);
    one(ds.unlabeled.size(), 2, ds.split.unlabeled_train, ds.split.unlabeled_test);
    ds.has_split = true;
    ds.manifest["train_fraction"] = train_fraction;
    ds.manifest["split_seed"] = seed;
}

// Statistics from training rows of both subsets only.
inline void fit_scaler(Dataset& ds)
{
    if (!ds.has_split)
        throw StateError("fit_scaler: dataset has no split");
    std::vector<const Sample*> rows;
    for (int i : ds.split.labeled_train)
        rows.push_back(&ds.labeled[static_cast<std::size_t>(i)]);
    for (int i : ds.split.unlabeled_train)
        rows.push_back(&ds.unlabeled[static_cast<std::size_t>(i)]);
    if (rows.empty())
        throw StateError("fit_scaler: no training rows");
    std::vector<double> flat;
    auto flatten = [&](const Sample& s) {
        flat.clear();
        for (const auto& r : s.features)
            flat.insert(flat.end(), r.begin(), r.end());
    };
    flatten(*rows.front());
    const std::size_t D = flat.size();
    std::vector<double> sum(D, 0.0), sq(D, 0.0);
    for (const Sample* s : rows) {
        flatten(*s);
        if (flat.size() != D)
            throw ShapeError("fit_scaler: inconsistent feature size");
        for (std::size_t c = 0; c < D; ++c)
            sum[c] += flat[c];
    }
    const double n = static_cast<double>(rows.size());
    Scaler& sc = ds.scaler;
    sc.mean.assign(D, 0.0);
    sc.scale.assign(D, 0.0);
    for (std::size_t c = 0; c < D; ++c)
        sc.mean[c] = sum[c] / n;
    for (const Sample* s : rows) {
        flatten(*s);
        for (std::size_t c = 0; c < D; ++c)
            sq[c] += (flat[c] - sc.mean[c]) * (flat[c] - sc.mean[c]);
    }
    for (std::size_t c = 0; c < D; ++c) {
        const double sd = std::sqrt(sq[c] / n);
        sc.scale[c] = sd > 1e-12 * (std::abs(sc.mean[c]) + 1e-300) && sd > 0.0 ? sd : 0.0;
    }
    sc.fitted = true;
}

// ---- serialization ------------------------------------------------------------

inline nlohmann::json scaler_to_json(const Scaler& s)
{
    return {{"fitted", s.fitted},
            {"mean", s.mean},
            {"scale", s.scale},
            {"box_lo", std::vector<double>{s.box_lo[0], s.box_lo[1], s.box_lo[2]}},
            {"box_hi", std::vector<double>{s.box_hi[0], s.box_hi[1], s.box_hi[2]}},
            {"label_range", std::vector<double>{kLabelLo, kLabelHi}}};
}

inline Scaler scaler_from_json(const nlohmann::json& j)
{
    Scaler s;
    s.fitted = j.at("fitted").get<bool>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.scale = j.at("scale").get<std::vector<double>>();
    const auto lo = j.at("box_lo").get<std::vector<double>>();
    const auto hi = j.at("box_hi").get<std::vector<double>>();
    if (lo.size() != 3 || hi.size() != 3 || s.mean.size() != s.scale.size())
        throw ParseError("scaler: malformed parameters");
    s.box_lo = Vec3(lo[0], lo[1], lo[2]);
    s.box_hi = Vec3(hi[0], hi[1], hi[2]);
    return s;
}

inline std::string Scaler::fingerprint() const
{
    return scene::hex64(scene::fnv1a(scaler_to_json(*this).dump()));
}

inline nlohmann::json sample_to_json(const Sample& s)
{
    nlohmann::json j;
    j["ue_id"] = s.ue_id;
    j["label"] = s.label ? nlohmann::json(std::vector<double>{(*s.label)[0], (*s.label)[1], (*s.label)[2]})
                         : nlohmann::json(nullptr);
    j["position"] = std::vector<double>{s.position[0], s.position[1], s.position[2]};
    j["features"] = s.features;
    j["mask"] = s.mask;
    return j;
}

inline Sample sample_from_json(const nlohmann::json& j)
{
    Sample s;
    s.ue_id = j.at("ue_id").get<std::int64_t>();
    if (!j.at("label").is_null()) {
        const auto v = j.at("label").get<std::vector<double>>();
        if (v.size() != 3)
            throw ParseError("label must have 3 entries");
        s.label = Vec3(v[0], v[1], v[2]);
    }
    const auto p = j.at("position").get<std::vector<double>>();
    if (p.size() != 3)
        throw ParseError("position must have 3 entries");
    s.position = Vec3(p[0], p[1], p[2]);
    s.features = j.at("features").get<std::vector<std::vector<double>>>();
    s.mask = j.at("mask").get<std::vector<std::vector<bool>>>();
    if (s.features.size() != s.mask.size())
        throw ParseError("features and mask must have one row per BS");
    for (std::size_t b = 0; b < s.features.size(); ++b)
        if (s.features[b].size() != 5 * s.mask[b].size())
            throw ParseError("feature row length must be 5L");
    return s;
}

struct LoadResult {
    Dataset dataset;
    std::vector<std::string> warnings;
};

inline std::string samples_path(const std::filesystem::path& dir) { return (dir / "samples.jsonl").string(); }
inline std::string manifest_path(const std::filesystem::path& dir) { return (dir / "manifest.json").string(); }

inline std::uint64_t file_hash(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return scene::fnv1a(ss.str());
}

// Writes <dir>/samples.jsonl (header record, then one sample per line) and
// <dir>/manifest.json. `stamp` (e.g. the config hash) is embedded in both.
inline void save(const Dataset& ds, const std::filesystem::path& dir, const std::string& stamp = "")
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(samples_path(dir), std::ios::binary | std::ios::trunc);
        if (!out)
            throw ParseError("cannot write " + samples_path(dir));
        out << nlohmann::json{{"header", {{"format", "ccloc.samples"}, {"format_version", kFormatVersion},
                                          {"config_hash", stamp}}}}
                   .dump()
            << '\n';
        for (const auto& s : ds.labeled)
            out << sample_to_json(s).dump() << '\n';
        for (const auto& s : ds.unlabeled)
            out << sample_to_json(s).dump() << '\n';
    }
    nlohmann::json m = ds.manifest;
    m["format_version"] = kFormatVersion;
    m["config_hash"] = stamp;
    m["n_labeled"] = ds.labeled.size();
    m["n_unlabeled"] = ds.unlabeled.size();
    m["data_hash"] = scene::hex64(file_hash(samples_path(dir)));
    if (ds.has_split)
        m["split"] = {{"labeled_train", ds.split.labeled_train},
                      {"labeled_test", ds.split.labeled_test},
                      {"unlabeled_train", ds.split.unlabeled_train},
                      {"unlabeled_test", ds.split.unlabeled_test}};
    m["scaler"] = scaler_to_json(ds.scaler);
    std::ofstream out(manifest_path(dir), std::ios::binary | std::ios::trunc);
    if (!out)
        throw ParseError("cannot write " + manifest_path(dir));
    out << m.dump(2) << '\n';
}

// Streams samples.jsonl, calling `on_sample` for each record. Errors carry
// the 1-based line number and the last line that parsed.
inline void for_each_sample(const std::string& path, const std::function<void(Sample&&)>& on_sample)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    std::size_t last_valid = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const bool had_newline = !in.eof();
        try {
            if (!had_newline)
                throw ParseError("missing line terminator (truncated file?)");
            const auto j = nlohmann::json::parse(line);
            if (lineno == 1) {
                const auto& h = j.at("header");
                if (h.at("format").get<std::string>() != "ccloc.samples")
                    throw ParseError("not a samples file");
                if (h.at("format_version").get<int>() != kFormatVersion)
                    throw ParseError("format_version " + std::to_string(h.at("format_version").get<int>()) +
                                     " is not supported (expected " + std::to_string(kFormatVersion) + ")");
            } else {
                on_sample(sample_from_json(j));
            }
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what() +
                             " (last valid line: " + std::to_string(last_valid) + ")");
        }
        last_valid = lineno;
    }
    if (lineno == 0)
        throw ParseError(path + ": empty file");
}

inline LoadResult load(const std::filesystem::path& dir)
{
    LoadResult res;
    Dataset& ds = res.dataset;
    nlohmann::json m;
    {
        std::ifstream in(manifest_path(dir), std::ios::binary);
        if (!in)
            throw ParseError("cannot open " + manifest_path(dir));
        try {
            m = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(manifest_path(dir) + ": " + e.what());
        }
    }
    try {
        if (m.at("format_version").get<int>() != kFormatVersion)
            throw ParseError("manifest format_version mismatch");
        const auto n_lab = m.at("n_labeled").get<std::size_t>();
        const auto n_unl = m.at("n_unlabeled").get<std::size_t>();
        const std::string path = samples_path(dir);
        std::size_t count = 0;
        for_each_sample(path, [&](Sample&& s) {
            if (count < n_lab) {
                if (!s.label)
                    throw ParseError("labeled sample without label");
                ds.labeled.push_back(std::move(s));
            } else {
                if (s.label)
                    throw ParseError("unlabeled sample carries a label");
                ds.unlabeled.push_back(std::move(s));
            }
            ++count;
        });
        if (count != n_lab + n_unl)
            throw ParseError(path + ": expected " + std::to_string(n_lab + n_unl) + " samples, found " +
                             std::to_string(count) + " (last valid line: " + std::to_string(count + 1) + ")");
        const std::string actual = scene::hex64(file_hash(path));
        if (m.contains("data_hash") && m.at("data_hash").get<std::string>() != actual)
            res.warnings.push_back("integrity: samples.jsonl hash " + actual + " does not match manifest data_hash " +
                                   m.at("data_hash").get<std::string>());
        if (m.contains("split")) {
            const auto& sp = m.at("split");
            ds.split.labeled_train = sp.at("labeled_train").get<std::vector<int>>();
            ds.split.labeled_test = sp.at("labeled_test").get<std::vector<int>>();
            ds.split.unlabeled_train = sp.at("unlabeled_train").get<std::vector<int>>();
            ds.split.unlabeled_test = sp.at("unlabeled_test").get<std::vector<int>>();
            ds.has_split = true;
        }
        ds.scaler = scaler_from_json(m.at("scaler"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path(dir) + ": " + e.what());
    }
    m.erase("split");
    m.erase("scaler");
    ds.manifest = m;
    return res;
}

// Content hash of a dataset directory (the samples file hash recorded in
// its manifest); checkpoints are bound to it.
inline std::string dataset_hash(const std::filesystem::path& dir)
{
    return scene::hex64(file_hash(samples_path(dir)));
}

} // namespace ccloc::dataset

#endif // CCLOC_DATASET_HPP
