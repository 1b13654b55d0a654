// Command-line front end: thin argument handling over the pipeline stages.
// Human-readable progress goes to stderr; the last stdout line is a JSON
// object with the artifact paths the command produced.
//
// Exit codes: 0 success, 2 bad config or arguments, 3 missing prerequisite
// artifact, 4 acceptance thresholds not met.

#include <CLI/CLI11.hpp>
#include <cstdio>
#include <svho/pipeline.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitAcceptance = 4;

svho::RunConfig load_config(const std::string& path) {
    if (path.empty()) return svho::RunConfig{};
    return svho::run_config_from_json(svho::json::parse(svho::read_text_file(path)));
}

void emit(const svho::json& artifacts) { std::printf("%s\n", artifacts.dump().c_str()); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse multi-view hand-object shape reconstruction"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand name

    std::string config_path;
    app.add_option("-c,--config", config_path, "run config JSON (flags override its values)")
        ->check(CLI::ExistingFile);
    std::string dataset_dir, output_dir;
    std::uint64_t seed = 0;
    app.add_option("--dataset-dir", dataset_dir, "dataset root");
    app.add_option("--output-dir", output_dir, "artifact root");
    app.add_option("--seed", seed, "master seed");

    auto* cmd_toy = app.add_subcommand("toy-generate", "render the synthetic dataset");
    bool force = false;
    int train_count = 0, test_count = 0, cameras = 0, image_size = 0, clutter = -1;
    cmd_toy->add_flag("--force", force, "regenerate even if the dataset exists");
    cmd_toy->add_option("--train-count", train_count, "training frames");
    cmd_toy->add_option("--test-count", test_count, "held-out frames");
    cmd_toy->add_option("--cameras", cameras, "views per frame");
    cmd_toy->add_option("--image-size", image_size, "rendered image side in pixels");
    cmd_toy->add_option("--clutter", clutter, "distractor shapes per frame");

    auto* cmd_ae = app.add_subcommand("ae-train", "train the shape autoencoders");
    std::string target = "both";
    int ae_steps = 0;
    double ae_lr = 0.0;
    cmd_ae->add_option("--target", target, "hand, object or both")
        ->check(CLI::IsMember({"hand", "object", "both"}));
    cmd_ae->add_option("--steps", ae_steps, "training steps");
    cmd_ae->add_option("--lr", ae_lr, "learning rate");

    auto* cmd_lat = app.add_subcommand("latents-extract", "encode training shapes to code cubes");

    auto* cmd_pred = app.add_subcommand("pred-train", "train the image-to-codes predictor");
    int pred_steps = 0, batch_images = 0;
    double pred_lr = 0.0;
    cmd_pred->add_option("--steps", pred_steps, "training steps");
    cmd_pred->add_option("--batch-images", batch_images, "views per training step");
    cmd_pred->add_option("--lr", pred_lr, "learning rate");

    auto* cmd_rec = app.add_subcommand("reconstruct", "reconstruct one frame from chosen views");
    std::string frame_id;
    std::vector<int> view_ids;
    cmd_rec->add_option("--frame", frame_id, "frame id")->required();
    cmd_rec->add_option("--views", view_ids, "comma-separated view ids")
        ->required()
        ->delimiter(',');

    auto* cmd_eval = app.add_subcommand("evaluate", "run the view-count ablation on the test split");
    bool check_acceptance = false;
    std::vector<int> view_counts;
    int repetitions = 0, n_samples = 0;
    cmd_eval->add_flag("--check-acceptance", check_acceptance,
                       "exit 4 unless the toy thresholds are met");
    cmd_eval->add_option("--view-counts", view_counts, "view counts to sweep")->delimiter(',');
    cmd_eval->add_option("--repetitions", repetitions, "seeded view subsets per count");
    cmd_eval->add_option("--samples", n_samples, "surface samples per metric evaluation");

    auto* cmd_plot = app.add_subcommand("plot", "regenerate plot CSVs from the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        svho::RunConfig cfg = load_config(config_path);
        if (app.count("--dataset-dir")) cfg.dataset_dir = dataset_dir;
        if (app.count("--output-dir")) cfg.output_dir = output_dir;
        if (app.count("--seed")) cfg.seed = seed;

        if (cmd_toy->parsed()) {
            if (cmd_toy->count("--train-count")) cfg.toy_train_count = train_count;
            if (cmd_toy->count("--test-count")) cfg.toy_test_count = test_count;
            if (cmd_toy->count("--cameras")) cfg.toy.camera_count = cameras;
            if (cmd_toy->count("--image-size")) cfg.toy.image_size = image_size;
            if (cmd_toy->count("--clutter")) cfg.toy.clutter_count = clutter;
            emit(svho::stage_toy_generate(cfg, force));
        } else if (cmd_ae->parsed()) {
            if (cmd_ae->count("--steps")) cfg.ae_train.steps = ae_steps;
            if (cmd_ae->count("--lr")) cfg.ae_train.lr = ae_lr;
            emit(svho::stage_ae_train(cfg, target));
        } else if (cmd_lat->parsed()) {
            emit(svho::stage_extract_latents(cfg));
        } else if (cmd_pred->parsed()) {
            if (cmd_pred->count("--steps")) cfg.pred_train.steps = pred_steps;
            if (cmd_pred->count("--batch-images")) cfg.pred_train.batch_images = batch_images;
            if (cmd_pred->count("--lr")) cfg.pred_train.lr = pred_lr;
            emit(svho::stage_pred_train(cfg));
        } else if (cmd_rec->parsed()) {
            emit(svho::stage_reconstruct(cfg, frame_id, view_ids));
        } else if (cmd_eval->parsed()) {
            if (cmd_eval->count("--view-counts")) cfg.eval.view_counts = view_counts;
            if (cmd_eval->count("--repetitions")) cfg.eval.repetitions = repetitions;
            if (cmd_eval->count("--samples")) cfg.eval.metrics.n_samples = n_samples;
            if (check_acceptance) cfg.eval_check_acceptance = true;
            auto [artifacts, report] = svho::stage_evaluate(cfg);
            if (cfg.eval_check_acceptance) {
                svho::AcceptanceCheck chk = svho::check_toy_acceptance(report);
                std::fprintf(stderr, "acceptance: %s\n", chk.detail.c_str());
                artifacts["acceptance_passed"] = chk.passed;
                emit(artifacts);
                if (!chk.passed) return kExitAcceptance;
            } else {
                emit(artifacts);
            }
        } else if (cmd_plot->parsed()) {
            emit(svho::stage_plot(cfg));
        }
    } catch (const svho::DependencyMissing& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDependency;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitOk;
}
