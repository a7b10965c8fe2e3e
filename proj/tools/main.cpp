// Command-line entry point. Argument parsing only; the command logic lives
// in obitonet/cli.hpp so tests can drive it in-process.
//
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "obitonet/cli.hpp"

namespace {

std::pair<std::string, std::string> split_override(const std::string& kv) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
        throw obitonet::ConfigError("--set expects key=value, got '" + kv + "'");
    return {kv.substr(0, eq), kv.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal point-cloud reconstruction: dataset synthesis, staged training, "
                 "reconstruction, evaluation and attention export"};
    app.require_subcommand(1);

    obitonet::DatasetCmd dataset_cmd;
    auto* dataset = app.add_subcommand("dataset", "Synthesize paired clouds and depth renders");
    dataset->add_option("--out", dataset_cmd.out_dir, "Output directory")->required();
    dataset->add_option("--shapes", dataset_cmd.shapes,
                        "Shape kinds cycled over samples (sphere cube torus plane_with_hole)")
        ->delimiter(',');
    dataset->add_option("--n", dataset_cmd.n, "Points per cloud");
    dataset->add_option("--count", dataset_cmd.count, "Number of samples");
    dataset->add_option("--seed", dataset_cmd.seed, "Master seed");
    dataset->add_option("--image-size", dataset_cmd.image_size, "Square render side in pixels");
    dataset->add_option("--view", dataset_cmd.view, "Projection axis (+x -x +y -y +z -z)");

    obitonet::TrainCmd train_cmd;
    std::vector<std::string> set_overrides;
    std::string flag_epochs, flag_lr, flag_seed, flag_batch, flag_precision;
    auto* train = app.add_subcommand("train", "Run one training stage");
    train->add_option("--data", train_cmd.data_dir, "Dataset directory (with manifest.txt)")
        ->required();
    train->add_option("--config", train_cmd.config_file, "Config file (key = value lines)");
    train->add_option("--stage", train_cmd.stage, "Train stage 1, 2 or 3")
        ->check(CLI::Range(1, 3));
    train->add_option("--resume", train_cmd.resume, "Checkpoint to resume from");
    train->add_option("--out", train_cmd.out_ckpt, "Output checkpoint path")->required();
    train->add_option("--log", train_cmd.log_file, "Training log CSV (default <out>.log)");
    train->add_option("--set", set_overrides, "Config override key=value (repeatable)");
    train->add_option("--epochs", flag_epochs, "Override epochs");
    train->add_option("--lr", flag_lr, "Override learning rate");
    train->add_option("--seed", flag_seed, "Override seed");
    train->add_option("--batch-size", flag_batch, "Override batch size");
    train->add_option("--precision", flag_precision, "Override precision (standard|wide)");

    obitonet::ReconstructCmd rec_cmd;
    auto* rec = app.add_subcommand("reconstruct", "Reconstruct a masked cloud with a checkpoint");
    rec->add_option("--ckpt", rec_cmd.ckpt, "Checkpoint")->required();
    rec->add_option("--cloud", rec_cmd.cloud_file, "Input cloud (.xyz or ascii .ply)")->required();
    rec->add_option("--image", rec_cmd.image_file, "Paired image (.pgm)")->required();
    rec->add_option("--mask-seed", rec_cmd.mask_seed, "Mask selection seed");
    rec->add_option("--out", rec_cmd.out_file, "Output reconstruction (.xyz)")->required();
    rec->add_option("--dump-attn", rec_cmd.attn_file, "Write cross-attention weights (ATTN v1)");
    rec->add_option("--masked-out", rec_cmd.masked_out,
                    "Masked-input cloud path (default <out>.masked.xyz)");

    obitonet::EvalCmd eval_cmd;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over a dataset");
    eval->add_option("--ckpt", eval_cmd.ckpt, "Checkpoint")->required();
    eval->add_option("--data", eval_cmd.data_dir, "Dataset directory")->required();
    eval->add_option("--out", eval_cmd.out_file, "Output CSV")->required();
    eval->add_flag("--identity-bypass", eval_cmd.identity_bypass,
                   "Debug: skip the network and emit the visible input");

    obitonet::SelftestCmd self_cmd;
    auto* self = app.add_subcommand("selftest", "Run the fast invariant suite");
    self->add_flag("--inject-gradient-fault", self_cmd.inject_gradient_fault,
                   "Debug: flip a backward rule to prove the gradient check fires");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*dataset) return obitonet::cmd_dataset(dataset_cmd, std::cout);
        if (*train) {
            for (const auto& kv : set_overrides) train_cmd.overrides.push_back(split_override(kv));
            if (!flag_epochs.empty()) train_cmd.overrides.emplace_back("epochs", flag_epochs);
            if (!flag_lr.empty()) train_cmd.overrides.emplace_back("lr", flag_lr);
            if (!flag_seed.empty()) train_cmd.overrides.emplace_back("seed", flag_seed);
            if (!flag_batch.empty()) train_cmd.overrides.emplace_back("batch_size", flag_batch);
            if (!flag_precision.empty())
                train_cmd.overrides.emplace_back("precision", flag_precision);
            return obitonet::cmd_train(train_cmd, std::cout);
        }
        if (*rec) return obitonet::cmd_reconstruct(rec_cmd, std::cout);
        if (*eval) return obitonet::cmd_eval(eval_cmd, std::cout);
        if (*self) return obitonet::cmd_selftest(self_cmd, std::cout);
    } catch (const obitonet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
