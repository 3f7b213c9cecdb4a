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

// Command-line front end: ccloc {scene,dataset,train,eval,repro}.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccloc/commands.hpp"

int main(int argc, char** argv)
{
    using namespace ccloc::commands;
    CLI::App app{"Channel-charting aided semi-supervised localization"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    Options o;
    std::string out, scene_file, dataset_dir, checkpoint;
    int jobs = 0;

    auto add_common = [&](CLI::App* sc, bool need_config) {
        auto* c = sc->add_option("-c,--config", o.config, "run config (JSON)");
        if (need_config)
            c->required();
        sc->add_option("-s,--set", o.overrides, "override a config key, e.g. train.epochs=5");
        sc->add_option("-j,--jobs", jobs, "worker threads (overrides config)")->check(CLI::PositiveNumber);
        sc->add_option("-o,--out", out, "output path (overrides config)");
    };

    auto* s_scene = app.add_subcommand("scene", "build the deployment and write scene.json");
    add_common(s_scene, true);

    auto* s_data = app.add_subcommand("dataset", "simulate CSI and write a dataset directory");
    add_common(s_data, true);
    s_data->add_option("--scene", scene_file, "scene.json (default <output_dir>/scene.json)");
    s_data->add_option("-r,--replicate", o.replicate, "replicate index")->check(CLI::NonNegativeNumber);

    auto* s_train = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(s_train, true);
    s_train->add_option("-m,--mode", o.mode, "semi | unsup | sup")
        ->check(CLI::IsMember({"semi", "unsup", "sup"}));
    s_train->add_option("-d,--dataset", dataset_dir, "dataset directory (default <output_dir>/dataset)");

    auto* s_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(s_eval, false);
    s_eval->add_option("-k,--checkpoint", checkpoint, "model checkpoint")->required();
    s_eval->add_option("-d,--dataset", dataset_dir, "dataset directory")->required();

    auto* s_repro = app.add_subcommand("repro", "run every scene, mode and replicate and compare");
    add_common(s_repro, true);

    CLI11_PARSE(app, argc, argv);

    if (!out.empty())
        o.out = out;
    if (jobs > 0)
        o.jobs = jobs;
    if (!scene_file.empty())
        o.scene_file = scene_file;
    if (!dataset_dir.empty())
        o.dataset_dir = dataset_dir;
    if (!checkpoint.empty())
        o.checkpoint = checkpoint;

    if (s_scene->parsed())
        return cmd_scene(o);
    if (s_data->parsed())
        return cmd_dataset(o);
    if (s_train->parsed())
        return cmd_train(o);
    if (s_eval->parsed())
        return cmd_eval(o);
    return cmd_repro(o);
}
