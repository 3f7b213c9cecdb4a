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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ccloc/dataset.hpp"

using namespace ccloc;
using namespace ccloc::dataset;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    fs::path p = fs::temp_directory_path() / "ccloc_tests" / (std::string(info->test_suite_name()) + "_" + info->name()) / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Synthetic dataset with random features; no scene needed.
Dataset synthetic(int J, int U, std::uint64_t seed = 1)
{
    Rng rng(seed);
    Dataset ds;
    for (int i = 0; i < J + U; ++i) {
        Sample s;
        s.ue_id = i;
        s.position = Vec3(uniform(rng, -10, 10), uniform(rng, -5, 5), uniform(rng, 1, 2));
        for (int b = 0; b < 2; ++b) {
            std::vector<double> f(10);
            for (auto& x : f)
                x = standard_normal(rng) * 1e-3 + 1e-7 * i;
            f[3] = 4.25;  // constant column
            s.features.push_back(f);
            s.mask.push_back({true, b == 0});
        }
        if (i < J) {
            s.label = s.position;
            ds.labeled.push_back(s);
        } else {
            ds.unlabeled.push_back(s);
        }
    }
    ds.manifest = {{"format_version", kFormatVersion}, {"n_labeled", J}, {"n_unlabeled", U}};
    ds.scaler.box_lo = Vec3(-10, -5, 0);
    ds.scaler.box_hi = Vec3(10, 5, 20);
    return ds;
}

const scene::Scene& street()
{
    static const scene::Scene s = scene::build_scene(scene::SceneConfig{});
    return s;
}

} // namespace

TEST(Build, SizesLabelsAndDisjointIds)
{
    BuildReport rep;
    const auto ds = build_dataset(street(), 12, 20, csi::PilotConfig{}, 5, 2, &rep);
    EXPECT_EQ(ds.labeled.size(), 12u);
    EXPECT_EQ(ds.unlabeled.size(), 20u);
    std::set<std::int64_t> ids;
    for (const auto& s : ds.labeled) {
        EXPECT_TRUE(s.label.has_value());
        EXPECT_EQ(*s.label, s.position);
        EXPECT_EQ(s.n_bs(), 4);
        for (const auto& r : s.features)
            EXPECT_EQ(r.size(), 25u);
        ids.insert(s.ue_id);
    }
    for (const auto& s : ds.unlabeled) {
        EXPECT_FALSE(s.label.has_value());
        EXPECT_TRUE(ids.insert(s.ue_id).second);
        EXPECT_TRUE(street().bounds.contains(s.position));
    }
    EXPECT_EQ(rep.total_links, 32 * 4);
    EXPECT_EQ(ds.manifest.at("codeword_index_base"), 0);
    EXPECT_EQ(ds.manifest.at("scene_hash"), scene::scene_hash(street()));
}

TEST(Build, MaskedEntriesAreZero)
{
    const auto ds = build_dataset(street(), 10, 10, csi::PilotConfig{}, 9);
    for (const auto* set : {&ds.labeled, &ds.unlabeled})
        for (const auto& s : *set)
            for (std::size_t b = 0; b < s.features.size(); ++b)
                for (int l = 0; l < 5; ++l)
                    if (!s.mask[b][l]) {
                        for (int g = 0; g < 5; ++g)
                            EXPECT_EQ(s.features[b][g * 5 + l], 0.0);
                    }
}

TEST(Build, DeterministicAcrossJobCounts)
{
    auto a = build_dataset(street(), 8, 12, csi::PilotConfig{}, 77, 1);
    auto b = build_dataset(street(), 8, 12, csi::PilotConfig{}, 77, 3);
    for (auto* d : {&a, &b}) {
        split(*d, 0.85, 3);
        fit_scaler(*d);
    }
    const auto pa = scratch("a"), pb = scratch("b");
    save(a, pa, "x");
    save(b, pb, "x");
    EXPECT_EQ(slurp(pa / "samples.jsonl"), slurp(pb / "samples.jsonl"));
    EXPECT_EQ(slurp(pa / "manifest.json"), slurp(pb / "manifest.json"));
}

TEST(Build, RejectsEmptySubsets)
{
    EXPECT_THROW(build_dataset(street(), 0, 5, csi::PilotConfig{}, 1), ConfigError);
}

TEST(Split, FractionPerSubset)
{
    auto ds = synthetic(100, 40);
    split(ds, 0.85, 11);
    EXPECT_EQ(ds.split.labeled_train.size(), 85u);
    EXPECT_EQ(ds.split.labeled_test.size(), 15u);
    EXPECT_EQ(ds.split.unlabeled_train.size(), 34u);
    EXPECT_EQ(ds.split.unlabeled_test.size(), 6u);
    std::set<int> all(ds.split.labeled_train.begin(), ds.split.labeled_train.end());
    for (int i : ds.split.labeled_test)
        EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), 100u);
    auto again = synthetic(100, 40);
    split(again, 0.85, 11);
    EXPECT_EQ(again.split, ds.split);
    split(again, 0.85, 12);
    EXPECT_NE(again.split, ds.split);
    EXPECT_THROW(split(again, 1.0, 1), ConfigError);
    EXPECT_THROW(split(again, 0.0, 1), ConfigError);
}

TEST(Scaler, ApplyBeforeFitIsStateError)
{
    auto ds = synthetic(5, 5);
    EXPECT_THROW(ds.scaler.apply_features(ds.labeled[0].features), StateError);
    EXPECT_THROW(ds.scaler.apply_label(Vec3::Zero()), StateError);
    EXPECT_THROW(fit_scaler(ds), StateError);
}

TEST(Scaler, StandardizesTrainRows)
{
    auto ds = synthetic(60, 80);
    split(ds, 0.85, 2);
    fit_scaler(ds);
    const std::size_t D = 20;
    std::vector<double> mean(D, 0.0), sq(D, 0.0);
    std::size_t n = 0;
    auto add = [&](const Sample& s) {
        const auto z = ds.scaler.apply_features(s.features);
        for (std::size_t c = 0; c < D; ++c) {
            mean[c] += z[c];
            sq[c] += z[c] * z[c];
        }
        ++n;
    };
    for (int i : ds.split.labeled_train)
        add(ds.labeled[i]);
    for (int i : ds.split.unlabeled_train)
        add(ds.unlabeled[i]);
    for (std::size_t c = 0; c < D; ++c) {
        if (c == 3 || c == 13) {
            EXPECT_EQ(ds.scaler.scale[c], 0.0);
            EXPECT_EQ(sq[c], 0.0);  // constant column maps to 0
            continue;
        }
        EXPECT_NEAR(mean[c] / n, 0.0, 1e-12);
        EXPECT_NEAR(sq[c] / n, 1.0, 1e-9);
    }
    const auto z = ds.scaler.apply_features(ds.labeled[0].features);
    const auto back = ds.scaler.invert_features(z);
    for (std::size_t c = 0; c < D; ++c)
        EXPECT_NEAR(back[c], ds.labeled[0].features[c / 10][c % 10], 1e-15);
}

TEST(Scaler, TestRowsDoNotLeak)
{
    auto a = synthetic(60, 80);
    split(a, 0.85, 2);
    auto b = a;
    for (int i : b.split.labeled_test)
        b.labeled[i].features[0][0] += 1000.0;
    for (int i : b.split.unlabeled_test)
        b.unlabeled[i].features[1][7] -= 55.0;
    fit_scaler(a);
    fit_scaler(b);
    EXPECT_EQ(a.scaler, b.scaler);
}

TEST(Scaler, LabelMap)
{
    auto ds = synthetic(10, 10);
    split(ds, 0.5, 1);
    fit_scaler(ds);
    const auto& sc = ds.scaler;
    const Vec3 lo = sc.apply_label(sc.box_lo), hi = sc.apply_label(sc.box_hi);
    for (int i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(lo[i], 0.05);
        EXPECT_DOUBLE_EQ(hi[i], 0.95);
    }
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const Vec3 y(uniform(rng, -10, 10), uniform(rng, -5, 5), uniform(rng, 0, 20));
        EXPECT_LT((sc.invert_label(sc.apply_label(y)) - y).norm(), 1e-12);
    }
}

TEST(Files, RoundTrip)
{
    auto ds = synthetic(7, 9);
    split(ds, 0.85, 4);
    fit_scaler(ds);
    const auto dir = scratch("ds");
    save(ds, dir, "cafe");
    const auto lr = load(dir);
    EXPECT_TRUE(lr.warnings.empty());
    const auto& back = lr.dataset;
    EXPECT_EQ(back.labeled, ds.labeled);  // exact, so no ulp drift
    EXPECT_EQ(back.unlabeled, ds.unlabeled);
    EXPECT_EQ(back.split, ds.split);
    EXPECT_EQ(back.scaler, ds.scaler);
    EXPECT_EQ(back.manifest.at("config_hash"), "cafe");
    EXPECT_EQ(dataset_hash(dir), back.manifest.at("data_hash").get<std::string>());
    const auto first = slurp(dir / "samples.jsonl").substr(0, 200);
    EXPECT_NE(first.find("\"config_hash\":\"cafe\""), std::string::npos);
}

TEST(Files, TruncationNamesLastValidLine)
{
    auto ds = synthetic(3, 3);
    const auto dir = scratch("ds");
    save(ds, dir);
    std::string text = slurp(dir / "samples.jsonl");
    // cut in the middle of the 5th line (header + 4 samples before it)
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i)
        pos = text.find('\n', pos) + 1;
    text.resize(pos + 30);
    std::ofstream(dir / "samples.jsonl", std::ios::binary | std::ios::trunc) << text;
    try {
        load(dir);
        FAIL() << "truncated file accepted";
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(":5:"), std::string::npos) << msg;
        EXPECT_NE(msg.find("last valid line: 4"), std::string::npos) << msg;
    }
}

TEST(Files, MalformedLine)
{
    auto ds = synthetic(2, 2);
    const auto dir = scratch("ds");
    save(ds, dir);
    std::string text = slurp(dir / "samples.jsonl");
    const auto p = text.find("\"ue_id\":1");
    text.replace(p, 9, "\"ue_id\":\"x\"");
    std::ofstream(dir / "samples.jsonl", std::ios::binary | std::ios::trunc) << text;
    try {
        load(dir);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
}

TEST(Files, VersionMismatch)
{
    auto ds = synthetic(2, 2);
    const auto dir = scratch("ds");
    save(ds, dir);
    std::string text = slurp(dir / "samples.jsonl");
    const auto p = text.find("\"format_version\":1");
    text.replace(p, 18, "\"format_version\":9");
    std::ofstream(dir / "samples.jsonl", std::ios::binary | std::ios::trunc) << text;
    EXPECT_THROW(load(dir), ParseError);
}

TEST(Files, HashMismatchWarns)
{
    auto ds = synthetic(3, 3);
    const auto dir = scratch("ds");
    save(ds, dir);
    std::string text = slurp(dir / "samples.jsonl");
    const auto p = text.find("\"ue_id\":2");
    text.replace(p, 9, "\"ue_id\":7");
    std::ofstream(dir / "samples.jsonl", std::ios::binary | std::ios::trunc) << text;
    const auto lr = load(dir);
    ASSERT_EQ(lr.warnings.size(), 1u);
    EXPECT_NE(lr.warnings[0].find("integrity"), std::string::npos);
}

TEST(Files, StreamingReader)
{
    auto ds = synthetic(4, 6);
    const auto dir = scratch("ds");
    save(ds, dir);
    std::vector<std::int64_t> ids;
    for_each_sample((dir / "samples.jsonl").string(), [&](Sample&& s) { ids.push_back(s.ue_id); });
    EXPECT_EQ(ids.size(), 10u);
    for (std::size_t i = 0; i < ids.size(); ++i)
        EXPECT_EQ(ids[i], static_cast<std::int64_t>(i));
}
