// dub-engine: synthetic-latent streaming video dubbing.
//
//   dub-engine generate-data --config cfg.json
//   dub-engine train         --config cfg.json [--dataset path]
//   dub-engine dub           --config cfg.json --checkpoint ck.bin --source ds.bin --audio ds.bin
//   dub-engine ablate        --config cfg.json
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dubengine/cli.hpp"

using namespace dubengine;

int main(int argc, char** argv) {
    CLI::App app{"dub-engine: audio-driven streaming latent video dubbing"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::string> out_dir;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--set", overrides,
                        "Override a config key, e.g. --set train.steps=100 (last wins)");
        sub->add_option("--out", out_dir, "Override out_dir from the config");
    };

    CLI::App* gen = app.add_subcommand("generate-data", "Generate a synthetic dataset container");
    add_common(gen);

    CLI::App* tr = app.add_subcommand("train", "Train the velocity model on a dataset");
    add_common(tr);
    std::optional<std::string> dataset_path;
    tr->add_option("--dataset", dataset_path, "Dataset container (default: <out_dir>/dataset.bin)");

    CLI::App* du = app.add_subcommand("dub", "Dub a source video with new audio");
    add_common(du);
    std::string checkpoint, source_path, audio_path;
    int source_index = 0, audio_index = 0;
    bool render_frames = false;
    std::optional<std::string> mode_flag;
    std::optional<double> sdedit_t0_flag;
    std::optional<int> ode_steps_flag;
    du->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    du->add_option("--source", source_path, "Dataset container holding the source video")->required();
    du->add_option("--source-index", source_index, "Record index of the source video");
    du->add_option("--audio", audio_path, "Dataset container holding the new audio")->required();
    du->add_option("--audio-index", audio_index, "Record index of the new audio");
    du->add_option("--mode", mode_flag, "streaming|i2v|fl2v (overrides sample.mode)");
    du->add_option("--sdedit-t0", sdedit_t0_flag, "SDEdit start time in [0,1]; 0 copies the source");
    du->add_option("--ode-steps", ode_steps_flag, "Euler steps per chunk");
    du->add_flag("--render", render_frames, "Render PNG frames next to the latent output");

    CLI::App* ab = app.add_subcommand("ablate",
                                      "Train m0..m3 reference strategies and emit comparison tables");
    add_common(ab);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (du->parsed()) {
            if (mode_flag) overrides.push_back("sample.mode=" + *mode_flag);
            if (sdedit_t0_flag) overrides.push_back("sample.sdedit_t0=" + std::to_string(*sdedit_t0_flag));
            if (ode_steps_flag) overrides.push_back("sample.ode_steps=" + std::to_string(*ode_steps_flag));
        }
        LoadedConfig lc = load_config(config_path, overrides, out_dir);
        if (gen->parsed()) return cmd_generate_data(lc);
        if (tr->parsed()) return cmd_train(lc, dataset_path);
        if (du->parsed())
            return cmd_dub(lc, checkpoint, source_path, source_index, audio_path, audio_index,
                           render_frames);
        if (ab->parsed()) return cmd_ablate(lc);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
