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

#ifndef CCLOC_PIPELINE_HPP
#define CCLOC_PIPELINE_HPP

// Run configuration (versioned JSON with dotted-path overrides) and the
// scene -> dataset -> train -> eval stages used by the command-line tool.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccloc/charting.hpp"
#include "ccloc/csi.hpp"
#include "ccloc/dataset.hpp"
#include "ccloc/error.hpp"
#include "ccloc/metrics.hpp"
#include "ccloc/scene.hpp"

namespace ccloc::pipeline {

using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

inline json default_config()
{
    const scene::SceneConfig s;
    const csi::PilotConfig p;
    const charting::ArchConfig a;
    const charting::TrainConfig t;
    return {
        {"schema", "ccloc.run"},
        {"schema_version", kSchemaVersion},
        {"seed", nullptr},
        {"output_dir", "runs/default"},
        {"jobs", 1},
        {"scene",
         {{"mode", "los"},
          {"street_length", s.street_length},
          {"street_width", s.street_width},
          {"wall_height", s.wall_height},
          {"carrier_frequency", s.carrier_frequency},
          {"bs_elements", s.bs_elements},
          {"ue_elements", s.ue_elements},
          {"spacing_ratio", s.spacing_ratio},
          {"wall_gamma", s.wall_gamma},
          {"bs_height", s.bs_height},
          {"ue_height_min", s.ue_height_min},
          {"ue_height_max", s.ue_height_max},
          {"n_obstacles", s.n_obstacles},
          {"obstacle_length_min", s.obstacle_length_min},
          {"obstacle_length_max", s.obstacle_length_max},
          {"obstacle_height", s.obstacle_height},
          {"obstacle_gamma", s.obstacle_gamma}}},
        {"pilot",
         {{"tx_power", p.tx_power},
          {"noise_var", p.noise_var},
          {"n_snapshots", p.n_snapshots},
          {"n_codewords", p.n_codewords},
          {"grid_size", p.grid_size},
          {"loading", p.loading},
          {"peak_floor", p.peak_floor},
          {"sigma_toa", p.sigma_toa},
          {"max_paths", p.max_paths},
          {"combiner", csi::to_string(p.combiner)}}},
        {"dataset", {{"n_labeled", 600}, {"n_unlabeled", 1400}, {"train_fraction", 0.85}}},
        {"model",
         {{"conv_channels", a.conv_channels}, {"kernel", a.kernel}, {"pool", a.pool}, {"fused_width", a.fused_width}}},
        {"train",
         {{"epochs", t.epochs},
          {"batch_labeled", t.batch_labeled},
          {"batch_unlabeled", t.batch_unlabeled},
          {"lambda_reg", t.lambda_reg},
          {"lr", t.adam.lr},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"adam_eps", t.adam.eps}}},
        {"eval", {{"k_max", 100}, {"ct_k", 10}, {"chart_split", "unlabeled_test"}, {"error_split", "all_test"}}},
        {"repro", {{"scenes", {"los", "nlos"}}, {"modes", {"semi", "unsup", "sup"}}, {"replicates", 3}}},
    };
}

namespace detail {

inline json* find_path(json& root, const std::string& dotted, bool create)
{
    json* cur = &root;
    std::stringstream ss(dotted);
    std::string key;
    while (std::getline(ss, key, '.')) {
        if (key.empty())
            throw ConfigError("config: empty segment in key path '" + dotted + "'");
        if (create && cur->is_null())
            *cur = json::object();
        if (!cur->is_object())
            throw ConfigError("config: /" + dotted + ": parent is not an object");
        if (!cur->contains(key)) {
            if (!create)
                return nullptr;
            (*cur)[key] = nullptr;
        }
        cur = &(*cur)[key];
    }
    return cur;
}

inline std::string pointer(const std::string& section, const std::string& key)
{
    return "/" + section + (key.empty() ? "" : "/" + key);
}

// Validates that every key in `user` exists in `defaults` with a compatible
// type, recursively. Unknown keys are errors so typos do not pass silently.
inline void check_against(const json& user, const json& defaults, const std::string& path)
{
    if (!user.is_object())
        throw ConfigError("config: " + (path.empty() ? "/" : path) + ": expected an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string p = path + "/" + it.key();
        if (!defaults.contains(it.key()))
            throw ConfigError("config: " + p + ": unknown key");
        const json& d = defaults.at(it.key());
        const json& v = it.value();
        if (d.is_object()) {
            check_against(v, d, p);
        } else if (d.is_null()) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
                throw ConfigError("config: " + p + ": expected a non-negative integer");
        } else if (d.is_number_integer() && !v.is_number_integer()) {
            throw ConfigError("config: " + p + ": expected an integer");
        } else if (d.is_number_float() && !v.is_number()) {
            throw ConfigError("config: " + p + ": expected a number");
        } else if (d.is_string() && !v.is_string()) {
            throw ConfigError("config: " + p + ": expected a string");
        } else if (d.is_array() && !v.is_array()) {
            throw ConfigError("config: " + p + ": expected an array");
        } else if (d.is_boolean() && !v.is_boolean()) {
            throw ConfigError("config: " + p + ": expected a boolean");
        }
    }
}

inline json merged(json base, const json& user)
{
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
            base[it.key()] = merged(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
    return base;
}

} // namespace detail

// Applies "a.b.c=value" overrides; value is parsed as JSON when possible,
// otherwise taken as a string.
inline void apply_override(json& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("config: override '" + assignment + "' is not of the form key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    *detail::find_path(cfg, key, true) = value;
}

// Merges a user document over the defaults and validates it.
inline json resolve_config(const json& user, const std::vector<std::string>& overrides = {})
{
    json u = user;
    for (const auto& o : overrides)
        apply_override(u, o);
    const json defaults = default_config();
    detail::check_against(u, defaults, "");
    if (!u.contains("schema") || u.at("schema") != "ccloc.run")
        throw ConfigError("config: /schema: expected \"ccloc.run\"");
    if (!u.contains("schema_version") || u.at("schema_version") != kSchemaVersion)
        throw ConfigError("config: /schema_version: expected " + std::to_string(kSchemaVersion));
    if (!u.contains("seed") || u.at("seed").is_null())
        throw ConfigError("config: /seed: a seed is mandatory");
    return detail::merged(defaults, u);
}

inline json load_config(const std::string& path, const std::vector<std::string>& overrides = {})
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return resolve_config(j, overrides);
}

// Hash of everything that influences numeric outputs (not output_dir/jobs).
inline std::string config_hash(const json& cfg)
{
    json c = cfg;
    c.erase("output_dir");
    c.erase("jobs");
    return scene::hex64(scene::fnv1a(c.dump()));
}

template <class T>
T get(const json& cfg, const std::string& section, const std::string& key)
{
    try {
        return cfg.at(section).at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: " + detail::pointer(section, key) + ": missing or wrong type");
    }
}

inline std::uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

inline scene::SceneConfig scene_config(const json& cfg)
{
    scene::SceneConfig s;
    try {
        s.mode = scene::parse_bs_mode(get<std::string>(cfg, "scene", "mode"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config: /scene/mode: " + std::string(e.what()));
    }
    s.seed = seed_of(cfg);
    s.street_length = get<double>(cfg, "scene", "street_length");
    s.street_width = get<double>(cfg, "scene", "street_width");
    s.wall_height = get<double>(cfg, "scene", "wall_height");
    s.carrier_frequency = get<double>(cfg, "scene", "carrier_frequency");
    s.bs_elements = get<int>(cfg, "scene", "bs_elements");
    s.ue_elements = get<int>(cfg, "scene", "ue_elements");
    s.spacing_ratio = get<double>(cfg, "scene", "spacing_ratio");
    s.wall_gamma = get<double>(cfg, "scene", "wall_gamma");
    s.bs_height = get<double>(cfg, "scene", "bs_height");
    s.ue_height_min = get<double>(cfg, "scene", "ue_height_min");
    s.ue_height_max = get<double>(cfg, "scene", "ue_height_max");
    s.n_obstacles = get<int>(cfg, "scene", "n_obstacles");
    s.obstacle_length_min = get<double>(cfg, "scene", "obstacle_length_min");
    s.obstacle_length_max = get<double>(cfg, "scene", "obstacle_length_max");
    s.obstacle_height = get<double>(cfg, "scene", "obstacle_height");
    s.obstacle_gamma = get<double>(cfg, "scene", "obstacle_gamma");
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: /scene: ") + e.what());
    }
    return s;
}

inline csi::PilotConfig pilot_config(const json& cfg)
{
    csi::PilotConfig p;
    p.tx_power = get<double>(cfg, "pilot", "tx_power");
    p.noise_var = get<double>(cfg, "pilot", "noise_var");
    p.n_snapshots = get<int>(cfg, "pilot", "n_snapshots");
    p.n_codewords = get<int>(cfg, "pilot", "n_codewords");
    p.grid_size = get<int>(cfg, "pilot", "grid_size");
    p.loading = get<double>(cfg, "pilot", "loading");
    p.peak_floor = get<double>(cfg, "pilot", "peak_floor");
    p.sigma_toa = get<double>(cfg, "pilot", "sigma_toa");
    p.max_paths = get<int>(cfg, "pilot", "max_paths");
    try {
        p.combiner = csi::parse_combiner(get<std::string>(cfg, "pilot", "combiner"));
        p.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: /pilot: ") + e.what());
    }
    return p;
}

inline charting::ArchConfig arch_config(const json& cfg)
{
    charting::ArchConfig a;
    a.conv_channels = get<std::vector<int>>(cfg, "model", "conv_channels");
    a.kernel = get<int>(cfg, "model", "kernel");
    a.pool = get<int>(cfg, "model", "pool");
    a.fused_width = get<int>(cfg, "model", "fused_width");
    try {
        a.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: /model: ") + e.what());
    }
    return a;
}

inline charting::TrainConfig train_config(const json& cfg, std::uint64_t seed)
{
    charting::TrainConfig t;
    t.epochs = get<int>(cfg, "train", "epochs");
    t.batch_labeled = get<int>(cfg, "train", "batch_labeled");
    t.batch_unlabeled = get<int>(cfg, "train", "batch_unlabeled");
    t.lambda_reg = get<double>(cfg, "train", "lambda_reg");
    t.adam.lr = get<double>(cfg, "train", "lr");
    t.adam.beta1 = get<double>(cfg, "train", "beta1");
    t.adam.beta2 = get<double>(cfg, "train", "beta2");
    t.adam.eps = get<double>(cfg, "train", "adam_eps");
    t.seed = seed;
    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: /train: ") + e.what());
    }
    return t;
}

// Per-replicate seeds. Replicate r varies the dataset draw and training;
// the scene geometry is fixed by the top-level seed.
struct ReplicateSeeds {
    std::uint64_t data, split, train;
};

inline ReplicateSeeds replicate_seeds(std::uint64_t seed, int replicate)
{
    const auto r = static_cast<std::uint64_t>(replicate);
    return {derive_seed(seed, {0xda7a, r}), derive_seed(seed, {0x5b11, r}), derive_seed(seed, {0x7a1, r})};
}

// ---- stages -----------------------------------------------------------------------------

inline dataset::Dataset make_dataset(const scene::Scene& sc, const json& cfg, const ReplicateSeeds& seeds, int jobs,
                                     dataset::BuildReport* report = nullptr)
{
    const int J = get<int>(cfg, "dataset", "n_labeled");
    const int U = get<int>(cfg, "dataset", "n_unlabeled");
    auto ds = dataset::build_dataset(sc, J, U, pilot_config(cfg), seeds.data, jobs, report);
    dataset::split(ds, get<double>(cfg, "dataset", "train_fraction"), seeds.split);
    dataset::fit_scaler(ds);
    json echo = cfg;
    echo.erase("output_dir");
    echo.erase("jobs");
    ds.manifest["config"] = echo;
    return ds;
}

struct Trained {
    charting::ChartModel model;
    charting::TrainLog log;
};

inline Trained train_model(const dataset::Dataset& ds, const json& cfg, charting::Mode mode, std::uint64_t seed)
{
    Trained t{charting::ChartModel(ds.n_bs(), 5 * ds.max_paths(), arch_config(cfg)), {}};
    t.model.init(derive_seed(seed, {0x1417}));
    const auto data = charting::make_train_data(ds);
    t.log = charting::train(t.model, data, train_config(cfg, seed), mode);
    return t;
}

inline std::string loss_log_csv(const charting::TrainLog& log, const std::string& stamp)
{
    std::ostringstream out;
    out.precision(17);
    out << "# config_hash=" << stamp << "\nstep,epoch,E,E_enc,E_dec\n";
    auto put = [&](double v) {
        if (std::isnan(v))
            out << "";
        else
            out << v;
    };
    for (const auto& s : log.steps) {
        out << s.step << ',' << s.epoch << ',';
        put(s.e);
        out << ',';
        put(s.e_enc);
        out << ',';
        put(s.e_dec);
        out << '\n';
    }
    return out.str();
}

struct EvalResult {
    metrics::ChartReport report;
    double ct_at_k = 0.0, tw_at_k = 0.0;
    int ct_k = 0;
    std::size_t n_chart = 0, n_error = 0;
};

inline std::vector<const dataset::Sample*> select(const dataset::Dataset& ds, const std::string& which)
{
    std::vector<const dataset::Sample*> out;
    auto add = [&](const std::vector<dataset::Sample>& v, const std::vector<int>& idx) {
        for (int i : idx)
            out.push_back(&v[static_cast<std::size_t>(i)]);
    };
    if (which == "unlabeled_test") {
        add(ds.unlabeled, ds.split.unlabeled_test);
    } else if (which == "labeled_test") {
        add(ds.labeled, ds.split.labeled_test);
    } else if (which == "all_test") {
        add(ds.labeled, ds.split.labeled_test);
        add(ds.unlabeled, ds.split.unlabeled_test);
    } else if (which == "all") {
        for (const auto& s : ds.labeled)
            out.push_back(&s);
        for (const auto& s : ds.unlabeled)
            out.push_back(&s);
    } else {
        throw ConfigError("config: /eval: unknown split '" + which + "'");
    }
    return out;
}

inline EvalResult evaluate(const charting::ChartModel& model, const dataset::Dataset& ds, const json& cfg)
{
    if (!ds.has_split)
        throw StateError("evaluate: dataset has no split");
    EvalResult r;
    const auto& sc = ds.scaler;
    const std::string fp = sc.fingerprint();

    const auto chart_set = select(ds, get<std::string>(cfg, "eval", "chart_split"));
    metrics::Points truth, latent;
    for (const auto* s : chart_set) {
        const auto z = model.encode(sc.apply_features(s->features));
        truth.push_back({s->position[0], s->position[1], s->position[2]});
        latent.push_back({z[0], z[1], z[2]});
    }
    r.n_chart = truth.size();
    r.report.curve = metrics::ct_tw_curve(truth, latent, get<int>(cfg, "eval", "k_max"));
    r.ct_k = get<int>(cfg, "eval", "ct_k");
    for (const auto& c : r.report.curve)
        if (c.k == r.ct_k) {
            r.ct_at_k = c.ct;
            r.tw_at_k = c.tw;
        }

    const auto err_set = select(ds, get<std::string>(cfg, "eval", "error_split"));
    metrics::Points pred, gt;
    for (const auto* s : err_set) {
        const auto y = charting::predict_location(model, sc, {sc.apply_features(s->features), fp});
        pred.push_back({y[0], y[1], y[2]});
        gt.push_back({s->position[0], s->position[1], s->position[2]});
    }
    r.n_error = pred.size();
    r.report.errors = metrics::error_cdf(pred, gt);
    r.report.has_errors = true;
    return r;
}

inline json eval_json(const EvalResult& r, const std::string& stamp)
{
    json j = metrics::to_json(r.report);
    j["config_hash"] = stamp;
    j["ct_k"] = r.ct_k;
    j["ct_at_k"] = r.ct_at_k;
    j["tw_at_k"] = r.tw_at_k;
    j["n_chart"] = r.n_chart;
    j["n_error"] = r.n_error;
    return j;
}

inline void write_text(const std::filesystem::path& p, const std::string& text)
{
    if (p.has_parent_path())
        std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ParseError("cannot write " + p.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace ccloc::pipeline

#endif // CCLOC_PIPELINE_HPP
