// End-to-end pipeline stages on a deliberately tiny run: dataset generation,
// both trainers, latent extraction, reconstruction, evaluation and the
// plot-data regeneration, plus the config serialization and dependency
// checks the CLI relies on.
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <svho/pipeline.hpp>

using namespace svho;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// Small enough that the whole pipeline finishes in seconds, large enough
// that every stage has real work to do (two splits, multiple views).
RunConfig micro_config(const fs::path& root) {
    RunConfig cfg;
    cfg.dataset_dir = (root / "toy").string();
    cfg.output_dir = (root / "run").string();
    cfg.seed = 21;
    cfg.grid = GridSpec::centered(16, 0.2, 0.05);
    cfg.patches = PatchSpec{2, 8};
    cfg.toy.camera_count = 4;
    cfg.toy.image_size = 32;
    cfg.toy.clutter_count = 1;
    cfg.toy_train_count = 3;
    cfg.toy_test_count = 2;
    cfg.ae_latent_dim = 8;
    cfg.ae_codebook_size = 16;
    cfg.ae_decoder_hidden = 32;
    cfg.ae_train.steps = 12;
    cfg.ae_train.batch_shapes = 2;
    cfg.ae_train.samples_per_shape = 128;
    cfg.ae_train.lr = 2e-3;
    cfg.pred_stem_width = 8;
    cfg.pred_stage_widths = {8, 8, 12, 12};
    cfg.pred_feature_dim = 12;
    cfg.pred_head_hidden = 16;
    cfg.pred_train.steps = 8;
    cfg.pred_train.batch_images = 1;
    cfg.pred_train.lr = 2e-3;
    cfg.eval.view_counts = {1, 2};
    cfg.eval.repetitions = 2;
    cfg.eval.metrics.n_samples = 1500;
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("run config survives a json round trip") {
    RunConfig cfg;
    cfg.dataset_dir = "data/somewhere";
    cfg.output_dir = "out/elsewhere";
    cfg.seed = 99;
    cfg.grid = GridSpec::centered(64, 0.3, 0.05);
    cfg.patches = PatchSpec{8, 8};
    cfg.toy.camera_count = 6;
    cfg.toy_train_count = 50;
    cfg.toy_test_count = 5;
    cfg.ae_codebook_size = 128;
    cfg.ae_train.steps = 777;
    cfg.pred_stage_widths = {16, 24, 32};
    cfg.pred_train.lr = 1.25e-4;
    cfg.eval.view_counts = {1, 2, 4, 8};
    cfg.eval.metrics.n_samples = 12345;

    json j = run_config_to_json(cfg);
    RunConfig back = run_config_from_json(j);
    REQUIRE(run_config_to_json(back).dump(2) == j.dump(2));

    // Omitted fields fall back to defaults.
    RunConfig partial = run_config_from_json(json{{"schema_version", 1}, {"seed", 42}});
    REQUIRE(partial.seed == 42);
    REQUIRE(partial.dataset_dir == RunConfig{}.dataset_dir);
    REQUIRE(partial.grid.resolution == RunConfig{}.grid.resolution);
}

TEST_CASE("config schema and field validation") {
    REQUIRE_THROWS_WITH(run_config_from_json(json{{"schema_version", 3}}),
                        ContainsSubstring("schema_version 3"));
    REQUIRE_THROWS_WITH(run_config_from_json(json::object()),
                        ContainsSubstring("schema_version"));

    RunConfig cfg;
    cfg.device = "cuda";
    REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("only cpu"));

    cfg = RunConfig{};
    cfg.patches = PatchSpec{3, 8};  // 24 != default 32-voxel grid
    REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("does not cover"));

    cfg = RunConfig{};
    cfg.toy_train_count = 0;
    REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("toy frame counts"));

    cfg = RunConfig{};
    cfg.ae_codebook_size = 0;
    REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("autoencoder sizes"));
}

TEST_CASE("stages report the command that would unblock them") {
    fs::path root = fs::temp_directory_path() / "svho_pipeline_deps";
    fs::remove_all(root);
    RunConfig cfg = micro_config(root);

    auto prerequisite_of = [](auto&& fn) {
        try {
            fn();
        } catch (const DependencyMissing& e) {
            REQUIRE_THAT(e.what(), ContainsSubstring("run `svho " + e.prerequisite + "` first"));
            return e.prerequisite;
        }
        return std::string("<no error>");
    };

    REQUIRE(prerequisite_of([&] { stage_ae_train(cfg); }) == "toy-generate");
    REQUIRE(prerequisite_of([&] { stage_extract_latents(cfg); }) == "ae-train");
    REQUIRE(prerequisite_of([&] { stage_pred_train(cfg); }) == "latents-extract");
    REQUIRE(prerequisite_of([&] { stage_reconstruct(cfg, "toy_0000", {0}); }) == "ae-train");
    REQUIRE(prerequisite_of([&] { stage_evaluate(cfg); }) == "ae-train");
    REQUIRE(prerequisite_of([&] { stage_plot(cfg); }) == "evaluate");

    // With autoencoder manifests present the next missing piece is the
    // predictor. The check only probes the filesystem, so stubs suffice.
    fs::create_directories(cfg.ae_dir(ShapeClass::kHand));
    fs::create_directories(cfg.ae_dir(ShapeClass::kObject));
    write_text_file((cfg.ae_dir(ShapeClass::kHand) / "manifest.json").string(), "{}");
    write_text_file((cfg.ae_dir(ShapeClass::kObject) / "manifest.json").string(), "{}");
    REQUIRE(prerequisite_of([&] { stage_evaluate(cfg); }) == "pred-train");

    // Target validation happens before any dataset access.
    REQUIRE_THROWS_WITH(stage_ae_train(cfg, "wrist"),
                        ContainsSubstring("hand, object or both"));
    fs::remove_all(root);
}

TEST_CASE("toy-generate skips an existing dataset unless forced") {
    fs::path root = fs::temp_directory_path() / "svho_pipeline_toygen";
    fs::remove_all(root);
    RunConfig cfg = micro_config(root);

    json first = stage_toy_generate(cfg, false);
    REQUIRE(first.at("skipped").get<bool>() == false);
    REQUIRE(first.at("frames").get<int>() == 5);
    REQUIRE(fs::exists(fs::path(first.at("manifest").get<std::string>())));

    json again = stage_toy_generate(cfg, false);
    REQUIRE(again.at("skipped").get<bool>() == true);
    REQUIRE(again.at("dataset_dir").get<std::string>() == cfg.dataset_dir);
    REQUIRE_FALSE(again.contains("frames"));

    json forced = stage_toy_generate(cfg, true);
    REQUIRE(forced.at("skipped").get<bool>() == false);
    REQUIRE(forced.at("frames").get<int>() == 5);
    fs::remove_all(root);
}

TEST_CASE("micro run end to end") {
    fs::path root = fs::temp_directory_path() / "svho_pipeline_e2e";
    fs::remove_all(root);
    RunConfig cfg = micro_config(root);

    stage_toy_generate(cfg, false);

    // Per-target training writes only that target's artifacts.
    json hand_art = stage_ae_train(cfg, "hand");
    REQUIRE(hand_art.contains("ae_hand"));
    REQUIRE_FALSE(hand_art.contains("ae_object"));
    json object_art = stage_ae_train(cfg, "object");
    REQUIRE(object_art.contains("ae_object"));
    for (ShapeClass cls : {ShapeClass::kHand, ShapeClass::kObject}) {
        REQUIRE(fs::exists(cfg.ae_dir(cls) / "manifest.json"));
        REQUIRE(count_lines(slurp(cfg.ae_log(cls))) == cfg.ae_train.steps);
    }

    json latents = stage_extract_latents(cfg);
    REQUIRE(latents.at("count").get<int>() == cfg.toy_train_count);
    std::string records = slurp(cfg.latents_dir() / "records.jsonl");
    REQUIRE(count_lines(records) == cfg.toy_train_count);
    // Codes are stored as one little-endian u16 per latent cell.
    const auto cells = static_cast<std::uintmax_t>(cfg.patches.patches_per_axis);
    int cube_files = 0;
    for (const auto& entry : fs::directory_iterator(cfg.latents_dir() / "cubes")) {
        REQUIRE(fs::file_size(entry.path()) == 2 * cells * cells * cells);
        ++cube_files;
    }
    REQUIRE(cube_files == 2 * cfg.toy_train_count);

    json pred = stage_pred_train(cfg);
    REQUIRE(fs::exists(fs::path(pred.at("predictor").get<std::string>()) / "manifest.json"));
    REQUIRE(count_lines(slurp(cfg.predictor_log())) == cfg.pred_train.steps);

    REQUIRE_THROWS_WITH(stage_reconstruct(cfg, "toy_9999", {0}),
                        ContainsSubstring("not found in dataset"));
    json rec = stage_reconstruct(cfg, "toy_0003", {1, 0});
    REQUIRE(rec.at("view_ids").get<std::vector<int>>() == std::vector<int>{0, 1});
    for (const char* key : {"hand_mesh", "object_mesh", "sidecar"})
        REQUIRE(fs::exists(fs::path(rec.at(key).get<std::string>())));

    auto [eval_art, report] = stage_evaluate(cfg);
    std::vector<std::string> files = eval_art.at("files").get<std::vector<std::string>>();
    REQUIRE(files.size() == 6);
    for (const std::string& f : files) REQUIRE(fs::exists(f));
    REQUIRE(report.frames.size() ==
            cfg.eval.view_counts.size() * static_cast<std::size_t>(cfg.eval.repetitions) *
                static_cast<std::size_t>(cfg.toy_test_count));

    // Evaluation is a pure function of the artifacts on disk: a rerun must
    // reproduce the report byte for byte.
    std::string report_json = slurp(cfg.report_dir() / "report.json");
    std::string frames_csv = slurp(cfg.report_dir() / "frames.csv");
    stage_evaluate(cfg);
    REQUIRE(slurp(cfg.report_dir() / "report.json") == report_json);
    REQUIRE(slurp(cfg.report_dir() / "frames.csv") == frames_csv);

    // plot regenerates the CSV views of report.json without rerunning anything.
    std::string curve_csv = slurp(cfg.report_dir() / "fscore_vs_views.csv");
    fs::remove(cfg.report_dir() / "fscore_vs_views.csv");
    fs::remove(cfg.report_dir() / "perobj.csv");
    stage_plot(cfg);
    REQUIRE(slurp(cfg.report_dir() / "fscore_vs_views.csv") == curve_csv);
    REQUIRE(slurp(cfg.report_dir() / "summary.csv") == slurp(files[3]));

    // This run only evaluated 1 and 2 views, so the 1-vs-4-view acceptance
    // check must decline rather than invent numbers.
    AcceptanceCheck check = check_toy_acceptance(report);
    REQUIRE_FALSE(check.passed);
    REQUIRE_THAT(check.detail, ContainsSubstring("view counts 1 and 4"));
    fs::remove_all(root);
}
