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

#ifndef CCLOC_COMMANDS_HPP
#define CCLOC_COMMANDS_HPP

// Subcommand implementations behind the `ccloc` tool. Each returns a
// process exit code: 0 success, 1 malformed config, 2 artifact hash
// mismatch, 3 any other failure.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccloc/charting.hpp"
#include "ccloc/dataset.hpp"
#include "ccloc/error.hpp"
#include "ccloc/pipeline.hpp"
#include "ccloc/scene.hpp"

#ifndef CCLOC_GIT_DESCRIBE
#define CCLOC_GIT_DESCRIBE "unknown"
#endif

namespace ccloc::commands {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kBadConfig = 1, kHashMismatch = 2, kFailure = 3 };

inline std::string version_string() { return std::string(pipeline::kVersion) + "-" + CCLOC_GIT_DESCRIBE; }

// Maps exceptions onto exit codes and prints a one-line diagnostic.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr)
{
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kBadConfig;
    } catch (const IntegrityError& e) {
        err << "error: " << e.what() << '\n';
        return kHashMismatch;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
}

struct Common {
    json config;            // resolved
    std::string hash;       // config hash
    fs::path out;           // output directory
    int jobs = 1;
};

inline Common common(const std::string& config_path, const std::vector<std::string>& overrides,
                     const std::optional<std::string>& out_override, std::optional<int> jobs)
{
    Common c;
    c.config = pipeline::load_config(config_path, overrides);
    c.hash = pipeline::config_hash(c.config);
    c.out = out_override ? fs::path(*out_override) : fs::path(c.config.at("output_dir").get<std::string>());
    c.jobs = jobs ? *jobs : c.config.at("jobs").get<int>();
    if (c.jobs < 1)
        throw ConfigError("config: /jobs: must be >= 1");
    return c;
}

// ---- scene ---------------------------------------------------------------------------

inline json scene_document(const scene::Scene& sc, const std::string& stamp)
{
    json j = scene::to_json(sc);
    j["scene_hash"] = scene::scene_hash(sc);
    j["config_hash"] = stamp;
    return j;
}

inline scene::Scene load_scene_file(const fs::path& p)
{
    json j;
    try {
        j = json::parse(pipeline::read_text(p));
    } catch (const json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
    auto sc = scene::scene_from_json(j);
    if (j.contains("scene_hash") && j.at("scene_hash").get<std::string>() != scene::scene_hash(sc))
        throw IntegrityError(p.string() + ": content does not match its recorded scene_hash");
    return sc;
}

inline void write_scene(const scene::Scene& sc, const fs::path& path, const std::string& stamp)
{
    pipeline::write_text(path, scene_document(sc, stamp).dump(2) + "\n");
}

// ---- dataset -------------------------------------------------------------------------

inline json build_report_json(const dataset::BuildReport& r)
{
    return {{"resampled_ues", r.resampled},
            {"los_links", r.los_links},
            {"connected_links", r.connected_links},
            {"total_links", r.total_links},
            {"low_confidence_links", r.low_confidence_links},
            {"rank_deficient_links", r.rank_deficient_links}};
}

inline void write_dataset(const scene::Scene& sc, const json& cfg, const std::string& stamp, int replicate, int jobs,
                          const fs::path& dir)
{
    dataset::BuildReport rep;
    auto ds = pipeline::make_dataset(sc, cfg, pipeline::replicate_seeds(pipeline::seed_of(cfg), replicate), jobs, &rep);
    ds.manifest["replicate"] = replicate;
    ds.manifest["build_report"] = build_report_json(rep);
    dataset::save(ds, dir, stamp);
}

inline dataset::Dataset load_dataset_checked(const fs::path& dir, const std::optional<std::string>& scene_hash,
                                             std::ostream& log)
{
    auto lr = dataset::load(dir);
    for (const auto& w : lr.warnings)
        log << "warning: " << w << '\n';
    if (!lr.warnings.empty())
        throw IntegrityError(dir.string() + ": dataset failed its integrity check");
    if (scene_hash && lr.dataset.manifest.value("scene_hash", std::string()) != *scene_hash)
        throw IntegrityError(dir.string() + ": dataset was built for a different scene");
    return std::move(lr.dataset);
}

// ---- train ---------------------------------------------------------------------------

inline void write_training(const dataset::Dataset& ds, const std::string& dataset_hash, const json& cfg,
                           const std::string& stamp, charting::Mode mode, int replicate, const fs::path& dir)
{
    const auto seeds = pipeline::replicate_seeds(pipeline::seed_of(cfg), replicate);
    auto tr = pipeline::train_model(ds, cfg, mode, seeds.train);
    json echo = cfg;
    echo.erase("output_dir");
    echo.erase("jobs");
    json h{{"config_hash", stamp},
           {"dataset_hash", dataset_hash},
           {"mode", charting::to_string(mode)},
           {"replicate", replicate},
           {"step", tr.log.steps.size()},
           {"seeds", {{"run", pipeline::seed_of(cfg)}, {"train", seeds.train}}},
           {"schedule",
            {{"steps_per_epoch", tr.log.schedule.steps_per_epoch},
             {"batch_unlabeled", tr.log.schedule.batch_unlabeled},
             {"batch_labeled", tr.log.schedule.batch_labeled}}},
           {"config", echo}};
    fs::create_directories(dir);
    charting::save_model((dir / "model.ckpt").string(), tr.model, ds.scaler, h);
    pipeline::write_text(dir / "loss.csv", pipeline::loss_log_csv(tr.log, stamp));
}

// ---- eval ----------------------------------------------------------------------------

inline pipeline::EvalResult write_eval(const charting::LoadedModel& lm, const dataset::Dataset& ds,
                                       const std::string& dataset_hash, const json& cfg, const std::string& stamp,
                                       const fs::path& dir)
{
    const std::string expected = lm.header.value("dataset_hash", std::string());
    if (expected != dataset_hash)
        throw IntegrityError("checkpoint was trained on dataset " + expected + ", refusing to evaluate on " +
                             dataset_hash);
    if (!(lm.scaler == ds.scaler))
        throw IntegrityError("checkpoint scaler differs from the dataset scaler");
    const auto r = pipeline::evaluate(lm.model, ds, cfg);
    json rep = pipeline::eval_json(r, stamp);
    rep["mode"] = lm.header.value("mode", std::string());
    rep["dataset_hash"] = dataset_hash;
    pipeline::write_text(dir / "report.json", rep.dump(2) + "\n");
    pipeline::write_text(dir / "ct_tw.csv", metrics::curve_csv(r.report.curve, stamp));
    pipeline::write_text(dir / "error_cdf.csv", metrics::cdf_csv(r.report.errors, stamp));
    return r;
}

// ---- subcommand entry points ---------------------------------------------------------

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::string> out;
    std::optional<int> jobs;
    std::optional<std::string> scene_file;
    std::optional<std::string> dataset_dir;
    std::optional<std::string> checkpoint;
    std::string mode = "semi";
    int replicate = 0;
};

inline int cmd_scene(const Options& o, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    return guarded(
        [&] {
            const auto c = common(o.config, o.overrides, std::nullopt, o.jobs);
            const auto sc = scene::build_scene(pipeline::scene_config(c.config));
            const fs::path path = o.out ? fs::path(*o.out) : c.out / "scene.json";
            write_scene(sc, path, c.hash);
            log << "scene " << scene::to_string(sc.mode) << " -> " << path.string() << " (hash " << scene::scene_hash(sc)
                << ")\n";
            return kOk;
        },
        err);
}

inline int cmd_dataset(const Options& o, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    return guarded(
        [&] {
            const auto c = common(o.config, o.overrides, std::nullopt, o.jobs);
            const fs::path scene_path = o.scene_file ? fs::path(*o.scene_file) : c.out / "scene.json";
            const auto sc = load_scene_file(scene_path);
            const fs::path dir = o.out ? fs::path(*o.out) : c.out / "dataset";
            write_dataset(sc, c.config, c.hash, o.replicate, c.jobs, dir);
            log << "dataset -> " << dir.string() << " (hash " << dataset::dataset_hash(dir) << ")\n";
            return kOk;
        },
        err);
}

inline int cmd_train(const Options& o, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    return guarded(
        [&] {
            const auto c = common(o.config, o.overrides, std::nullopt, o.jobs);
            const auto mode = charting::parse_mode(o.mode);
            const fs::path ds_dir = o.dataset_dir ? fs::path(*o.dataset_dir) : c.out / "dataset";
            const auto ds = load_dataset_checked(ds_dir, std::nullopt, err);
            const fs::path dir = o.out ? fs::path(*o.out) : c.out / charting::to_string(mode);
            write_training(ds, dataset::dataset_hash(ds_dir), c.config, c.hash, mode,
                           ds.manifest.value("replicate", 0), dir);
            log << "train " << charting::to_string(mode) << " -> " << (dir / "model.ckpt").string() << '\n';
            return kOk;
        },
        err);
}

inline int cmd_eval(const Options& o, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    return guarded(
        [&] {
            if (!o.checkpoint || !o.dataset_dir)
                throw ConfigError("eval: --checkpoint and --dataset are required");
            const auto lm = charting::load_model(*o.checkpoint);
            json cfg;
            if (!o.config.empty())
                cfg = pipeline::load_config(o.config, o.overrides);
            else
                cfg = pipeline::resolve_config(lm.header.at("config"), o.overrides);
            const std::string stamp = pipeline::config_hash(cfg);
            const auto ds = load_dataset_checked(*o.dataset_dir, std::nullopt, err);
            const fs::path dir = o.out ? fs::path(*o.out) : fs::path(*o.checkpoint).parent_path();
            const auto r = write_eval(lm, ds, dataset::dataset_hash(*o.dataset_dir), cfg, stamp, dir);
            log << "eval CT(" << r.ct_k << ")=" << r.ct_at_k << " TW(" << r.ct_k << ")=" << r.tw_at_k
                << " median=" << r.report.errors.median << " m -> " << (dir / "report.json").string() << '\n';
            return kOk;
        },
        err);
}

struct ReproCell {
    std::vector<double> ct, tw, median, p90, below2;
};

inline double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Full desk-scale experiment: scenes x replicates x modes, one aggregated
// report per (scene, mode) plus a comparison table.
inline int cmd_repro(const Options& o, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    return guarded(
        [&] {
            const auto t0 = std::chrono::steady_clock::now();
            auto c = common(o.config, o.overrides, o.out, o.jobs);
            const auto scenes = c.config.at("repro").at("scenes").get<std::vector<std::string>>();
            const auto modes = c.config.at("repro").at("modes").get<std::vector<std::string>>();
            const int reps = c.config.at("repro").at("replicates").get<int>();
            if (scenes.empty() || modes.empty() || reps < 1)
                throw ConfigError("config: /repro: need scenes, modes and replicates >= 1");
            for (const auto& m : modes)
                charting::parse_mode(m);

            std::map<std::pair<std::string, std::string>, ReproCell> cells;
            for (const auto& sname : scenes) {
                json cfg = c.config;
                cfg["scene"]["mode"] = sname;
                const auto sc = scene::build_scene(pipeline::scene_config(cfg));
                const fs::path sdir = c.out / sname;
                write_scene(sc, sdir / "scene.json", c.hash);
                for (int r = 0; r < reps; ++r) {
                    const fs::path rdir = sdir / ("rep" + std::to_string(r));
                    write_dataset(sc, cfg, c.hash, r, c.jobs, rdir / "dataset");
                    const auto ds = load_dataset_checked(rdir / "dataset", scene::scene_hash(sc), err);
                    const std::string dh = dataset::dataset_hash(rdir / "dataset");
                    for (const auto& mname : modes) {
                        const auto mode = charting::parse_mode(mname);
                        write_training(ds, dh, cfg, c.hash, mode, r, rdir / mname);
                        const auto lm = charting::load_model((rdir / mname / "model.ckpt").string());
                        const auto ev = write_eval(lm, ds, dh, cfg, c.hash, rdir / mname);
                        auto& cell = cells[{sname, mname}];
                        cell.ct.push_back(ev.ct_at_k);
                        cell.tw.push_back(ev.tw_at_k);
                        cell.median.push_back(ev.report.errors.median);
                        cell.p90.push_back(ev.report.errors.p90);
                        cell.below2.push_back(ev.report.errors.frac_below_2m);
                        log << sname << " rep" << r << ' ' << mname << ": CT=" << ev.ct_at_k << " TW=" << ev.tw_at_k
                            << " median=" << ev.report.errors.median << " m\n";
                    }
                }
            }

            std::ostringstream csv, md;
            csv.precision(17);
            csv << "# config_hash=" << c.hash << "\nscene,mode,ct,tw,median_m,p90_m,p_below_2m\n";
            md << "<!-- config_hash=" << c.hash << " -->\n"
               << "| scene | mode | CT(k) | TW(k) | median error (m) | p90 (m) | P(err < 2 m) |\n"
               << "|---|---|---|---|---|---|---|\n";
            md.setf(std::ios::fixed);
            md.precision(4);
            json table = json::array();
            for (const auto& [key, cell] : cells) {
                const auto& [sname, mname] = key;
                json rep{{"config_hash", c.hash},
                         {"scene", sname},
                         {"mode", mname},
                         {"replicates", reps},
                         {"ct_k", c.config.at("eval").at("ct_k")},
                         {"ct", cell.ct},
                         {"tw", cell.tw},
                         {"median_m", cell.median},
                         {"p90_m", cell.p90},
                         {"p_below_2m", cell.below2},
                         {"mean",
                          {{"ct", mean_of(cell.ct)},
                           {"tw", mean_of(cell.tw)},
                           {"median_m", mean_of(cell.median)},
                           {"p90_m", mean_of(cell.p90)},
                           {"p_below_2m", mean_of(cell.below2)}}}};
                pipeline::write_text(c.out / sname / (mname + "_report.json"), rep.dump(2) + "\n");
                table.push_back(rep);
                csv << sname << ',' << mname << ',' << mean_of(cell.ct) << ',' << mean_of(cell.tw) << ','
                    << mean_of(cell.median) << ',' << mean_of(cell.p90) << ',' << mean_of(cell.below2) << '\n';
                md << "| " << sname << " | " << mname << " | " << mean_of(cell.ct) << " | " << mean_of(cell.tw) << " | "
                   << mean_of(cell.median) << " | " << mean_of(cell.p90) << " | " << mean_of(cell.below2) << " |\n";
            }
            pipeline::write_text(c.out / "comparison.csv", csv.str());
            pipeline::write_text(c.out / "comparison.md", md.str());
            pipeline::write_text(c.out / "comparison.json",
                                 json{{"config_hash", c.hash}, {"results", table}}.dump(2) + "\n");
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            pipeline::write_text(c.out / "run_summary.json",
                                 json{{"config_hash", c.hash},
                                      {"version", version_string()},
                                      {"wall_time_s", wall},
                                      {"jobs", c.jobs}}
                                         .dump(2) +
                                     "\n");
            log << md.str();
            return kOk;
        },
        err);
}

} // namespace ccloc::commands

#endif // CCLOC_COMMANDS_HPP
