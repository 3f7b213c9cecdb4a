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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "json.hpp"

#ifndef CCLOC_CLI_PATH
#error "CCLOC_CLI_PATH must point at the ccloc executable"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string err;
};

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("ccloc_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run ccloc(const std::string& args, const fs::path& work)
{
    const fs::path errf = work / "stderr.txt";
    const std::string cmd = std::string("\"") + CCLOC_CLI_PATH + "\" " + args + " >/dev/null 2>\"" + errf.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(errf);
    return r;
}

fs::path tiny_config(const fs::path& dir, const fs::path& out)
{
    const json cfg{{"schema", "ccloc.run"},
                   {"schema_version", 1},
                   {"seed", 5},
                   {"output_dir", out.string()},
                   {"dataset", {{"n_labeled", 30}, {"n_unlabeled", 50}}},
                   {"train", {{"epochs", 2}, {"batch_labeled", 5}}},
                   {"eval", {{"k_max", 5}, {"ct_k", 3}}},
                   {"repro", {{"replicates", 1}}}};
    const fs::path p = dir / "run.json";
    std::ofstream(p) << cfg.dump(2);
    return p;
}

// scene -> dataset -> train -> eval into `out`; returns the produced files
std::vector<fs::path> pipeline(const fs::path& work, const fs::path& out)
{
    const auto cfg = tiny_config(work, out).string();
    EXPECT_EQ(ccloc("scene -c " + cfg, work).code, 0);
    EXPECT_EQ(ccloc("dataset -c " + cfg, work).code, 0);
    EXPECT_EQ(ccloc("train -c " + cfg + " -m semi", work).code, 0);
    EXPECT_EQ(ccloc("eval -k " + (out / "semi" / "model.ckpt").string() + " -d " + (out / "dataset").string(), work).code,
              0);
    return {"scene.json",       "dataset/manifest.json", "dataset/samples.jsonl", "semi/model.ckpt",
            "semi/loss.csv",    "semi/report.json",      "semi/ct_tw.csv",        "semi/error_cdf.csv"};
}

} // namespace

TEST(Cli, VersionAndHelp)
{
    const auto w = scratch("version");
    EXPECT_EQ(ccloc("--version", w).code, 0);
    EXPECT_NE(ccloc("frobnicate", w).code, 0);
}

TEST(Cli, MalformedConfigExitsOneWithKeyPath)
{
    const auto w = scratch("malformed");
    std::ofstream(w / "bad.json") << R"({"schema":"ccloc.run","schema_version":1,"seed":1,"train":{"epochs":"x"}})";
    const auto r = ccloc("scene -c " + (w / "bad.json").string(), w);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("/train/epochs"), std::string::npos) << r.err;

    std::ofstream(w / "trunc.json") << R"({"schema":"ccloc.run",)";
    EXPECT_EQ(ccloc("scene -c " + (w / "trunc.json").string(), w).code, 1);

    const auto cfg = tiny_config(w, w / "out");
    const auto o = ccloc("scene -c " + cfg.string() + " -s scene.street_width=-3", w);
    EXPECT_EQ(o.code, 1);
    EXPECT_NE(o.err.find("/scene"), std::string::npos) << o.err;
}

TEST(Cli, PipelineIsByteReproducibleAndStamped)
{
    const auto w1 = scratch("rep_a"), w2 = scratch("rep_b");
    const auto files = pipeline(w1, w1 / "out");
    pipeline(w2, w2 / "out");
    const std::string hash = json::parse(slurp(w1 / "out" / "semi" / "report.json")).at("config_hash");
    EXPECT_EQ(hash.size(), 16u);
    for (const auto& f : files) {
        const auto a = slurp(w1 / "out" / f), b = slurp(w2 / "out" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, b) << f;
        if (f.extension() != ".jsonl") {
            EXPECT_NE(a.find(hash), std::string::npos) << f << " lacks the config hash";
        }
    }
}

TEST(Cli, EvalRefusesForeignDataset)
{
    const auto w = scratch("foreign");
    const auto out = w / "out";
    pipeline(w, out);
    const auto cfg = tiny_config(w, out).string();
    ASSERT_EQ(ccloc("dataset -c " + cfg + " -r 1 -o " + (w / "other").string(), w).code, 0);
    const auto r = ccloc("eval -k " + (out / "semi" / "model.ckpt").string() + " -d " + (w / "other").string(), w);
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());

    // editing a value behind the manifest's back is an integrity failure too
    auto text = slurp(out / "dataset" / "samples.jsonl");
    auto pos = text.find("\"position\":[") + 12;
    pos += text[pos] == '-';
    ASSERT_TRUE(text[pos] >= '0' && text[pos] <= '9') << text.substr(pos - 8, 20);
    text[pos] = text[pos] == '9' ? '8' : static_cast<char>(text[pos] + 1);
    std::ofstream(out / "dataset" / "samples.jsonl", std::ios::binary) << text;
    const auto c = ccloc("eval -k " + (out / "semi" / "model.ckpt").string() + " -d " + (out / "dataset").string(), w);
    EXPECT_EQ(c.code, 2);
}

TEST(Cli, ReproWritesSixReports)
{
    const auto w = scratch("repro");
    const auto cfg = tiny_config(w, w / "out").string();
    ASSERT_EQ(ccloc("repro -c " + cfg, w).code, 0);
    int n = 0;
    for (const char* s : {"los", "nlos"})
        for (const char* m : {"semi", "unsup", "sup"}) {
            const auto p = w / "out" / s / (std::string(m) + "_report.json");
            ASSERT_TRUE(fs::exists(p)) << p;
            const auto j = json::parse(slurp(p));
            EXPECT_EQ(j.at("ct").size(), 1u);
            ++n;
        }
    EXPECT_EQ(n, 6);
    EXPECT_TRUE(fs::exists(w / "out" / "comparison.md"));
    EXPECT_TRUE(fs::exists(w / "out" / "run_summary.json"));
}
