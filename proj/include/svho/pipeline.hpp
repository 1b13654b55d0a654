#pragma once

// Workflow stages behind the CLI: every subcommand body lives here so tests
// can drive the exact same code paths in-process. Stages read/write artifacts
// under RunConfig.output_dir and check their prerequisites explicitly.

#include "svho/autoencoder.hpp"
#include "svho/datasets.hpp"
#include "svho/eval.hpp"
#include "svho/fusion.hpp"
#include "svho/mesh_sdf.hpp"
#include "svho/predictor.hpp"

namespace svho {

// Missing upstream artifact; carries the command the user has to run first.
struct DependencyMissing : std::runtime_error {
    std::string prerequisite;
    DependencyMissing(const std::string& msg, std::string prereq)
        : std::runtime_error(msg), prerequisite(std::move(prereq)) {}
};

constexpr int kRunConfigSchemaVersion = 1;

struct RunConfig {
    std::string dataset_dir = "out/toy";
    std::string output_dir = "out/run";
    std::string device = "cpu";
    std::uint64_t seed = 7;

    GridSpec grid = GridSpec::centered(32, 0.2, 0.03125);
    PatchSpec patches{4, 8};

    ToySceneConfig toy;
    int toy_train_count = 200;
    int toy_test_count = 20;

    int ae_latent_dim = 32;
    int ae_codebook_size = 64;
    int ae_decoder_hidden = 256;
    double ae_beta = 0.25;
    AeTrainConfig ae_train;

    int pred_stem_width = 16;
    std::vector<int> pred_stage_widths{16, 24, 32, 48};
    int pred_feature_dim = 48;
    int pred_head_hidden = 64;
    PredTrainConfig pred_train;

    EvalRunConfig eval;
    bool eval_check_acceptance = false;

    void validate() const {
        if (device != "cpu")
            throw std::runtime_error("unsupported device '" + device + "' (only cpu)");
        if (dataset_dir.empty() || output_dir.empty())
            throw std::runtime_error("dataset_dir and output_dir must be set");
        grid.validate();
        patches.validate();
        if (grid.resolution != patches.patches_per_axis * patches.patch_resolution)
            throw std::runtime_error("patch layout does not cover the grid");
        toy.validate();
        if (toy_train_count < 1 || toy_test_count < 0)
            throw std::runtime_error("toy frame counts must be positive");
        if (ae_latent_dim < 1 || ae_codebook_size < 1 || ae_decoder_hidden < 1)
            throw std::runtime_error("autoencoder sizes must be positive");
        ae_train.validate();
        pred_train.validate();
        eval.validate();
    }

    VqVaeConfig autoencoder_config(std::uint64_t seed_offset) const {
        VqVaeConfig c;
        c.grid = grid;
        c.patches = patches;
        c.latent_dim = ae_latent_dim;
        c.codebook_size = ae_codebook_size;
        c.decoder_hidden = ae_decoder_hidden;
        c.beta = ae_beta;
        c.seed = seed + seed_offset;
        c.validate();
        return c;
    }

    PredictorConfig predictor_config(int k_hand, int k_object) const {
        PredictorConfig c;
        c.grid = grid;
        c.cells_per_axis = patches.patches_per_axis;
        c.k_hand = k_hand;
        c.k_object = k_object;
        c.stem_width = pred_stem_width;
        c.stage_widths = pred_stage_widths;
        c.feature_dim = pred_feature_dim;
        c.head_hidden = pred_head_hidden;
        c.seed = seed + 11;
        c.validate();
        return c;
    }

    // artifact layout under output_dir
    fs::path ae_dir(ShapeClass cls) const {
        return fs::path(output_dir) / (cls == ShapeClass::kHand ? "ae_hand" : "ae_object");
    }
    fs::path ae_log(ShapeClass cls) const {
        return fs::path(output_dir) /
               (cls == ShapeClass::kHand ? "ae_hand_log.jsonl" : "ae_object_log.jsonl");
    }
    fs::path latents_dir() const { return fs::path(output_dir) / "latents"; }
    fs::path predictor_dir() const { return fs::path(output_dir) / "predictor"; }
    fs::path predictor_log() const { return fs::path(output_dir) / "predictor_log.jsonl"; }
    fs::path reconstructions_dir() const { return fs::path(output_dir) / "reconstructions"; }
    fs::path report_dir() const { return fs::path(output_dir) / "report"; }
};

inline json run_config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = kRunConfigSchemaVersion;
    j["dataset_dir"] = c.dataset_dir;
    j["output_dir"] = c.output_dir;
    j["device"] = c.device;
    j["seed"] = c.seed;
    j["grid"] = {{"resolution", c.grid.resolution},
                 {"half_extent", c.grid.half_extent},
                 {"truncation", c.grid.truncation}};
    j["patches"] = {{"patches_per_axis", c.patches.patches_per_axis},
                    {"patch_resolution", c.patches.patch_resolution}};
    json toy = toy_config_to_json(c.toy);
    toy["train_count"] = c.toy_train_count;
    toy["test_count"] = c.toy_test_count;
    j["toy"] = toy;
    j["autoencoder"] = {{"latent_dim", c.ae_latent_dim},
                        {"codebook_size", c.ae_codebook_size},
                        {"decoder_hidden", c.ae_decoder_hidden},
                        {"beta", c.ae_beta},
                        {"steps", c.ae_train.steps},
                        {"batch_shapes", c.ae_train.batch_shapes},
                        {"samples_per_shape", c.ae_train.samples_per_shape},
                        {"lr", c.ae_train.lr},
                        {"restart_interval", c.ae_train.restart_interval},
                        {"early_stop_ratio", c.ae_train.early_stop_ratio}};
    j["predictor"] = {{"stem_width", c.pred_stem_width},
                      {"stage_widths", c.pred_stage_widths},
                      {"feature_dim", c.pred_feature_dim},
                      {"head_hidden", c.pred_head_hidden},
                      {"steps", c.pred_train.steps},
                      {"batch_images", c.pred_train.batch_images},
                      {"lr", c.pred_train.lr},
                      {"early_stop_ratio", c.pred_train.early_stop_ratio}};
    j["evaluate"] = {{"view_counts", c.eval.view_counts},
                     {"repetitions", c.eval.repetitions},
                     {"seed", c.eval.seed},
                     {"n_samples", c.eval.metrics.n_samples},
                     {"f_thresholds_hand", c.eval.metrics.f_thresholds_hand},
                     {"f_thresholds_object", c.eval.metrics.f_thresholds_object},
                     {"metric_seed", c.eval.metrics.seed},
                     {"check_acceptance", c.eval_check_acceptance}};
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    int version = j.value("schema_version", -1);
    if (version != kRunConfigSchemaVersion)
        throw std::runtime_error("unsupported config schema_version " +
                                 std::to_string(version) + " (expected " +
                                 std::to_string(kRunConfigSchemaVersion) + ")");
    RunConfig c;
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.device = j.value("device", c.device);
    c.seed = j.value("seed", c.seed);
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        c.grid = GridSpec::centered(g.value("resolution", c.grid.resolution),
                                    g.value("half_extent", c.grid.half_extent),
                                    g.value("truncation", c.grid.truncation));
    }
    if (j.contains("patches")) {
        const json& p = j.at("patches");
        c.patches.patches_per_axis = p.value("patches_per_axis", c.patches.patches_per_axis);
        c.patches.patch_resolution = p.value("patch_resolution", c.patches.patch_resolution);
    }
    if (j.contains("toy")) {
        c.toy = toy_config_from_json(j.at("toy"));
        c.toy_train_count = j.at("toy").value("train_count", c.toy_train_count);
        c.toy_test_count = j.at("toy").value("test_count", c.toy_test_count);
    }
    if (j.contains("autoencoder")) {
        const json& a = j.at("autoencoder");
        c.ae_latent_dim = a.value("latent_dim", c.ae_latent_dim);
        c.ae_codebook_size = a.value("codebook_size", c.ae_codebook_size);
        c.ae_decoder_hidden = a.value("decoder_hidden", c.ae_decoder_hidden);
        c.ae_beta = a.value("beta", c.ae_beta);
        c.ae_train.steps = a.value("steps", c.ae_train.steps);
        c.ae_train.batch_shapes = a.value("batch_shapes", c.ae_train.batch_shapes);
        c.ae_train.samples_per_shape = a.value("samples_per_shape", c.ae_train.samples_per_shape);
        c.ae_train.lr = a.value("lr", c.ae_train.lr);
        c.ae_train.restart_interval = a.value("restart_interval", c.ae_train.restart_interval);
        c.ae_train.early_stop_ratio = a.value("early_stop_ratio", c.ae_train.early_stop_ratio);
    }
    if (j.contains("predictor")) {
        const json& p = j.at("predictor");
        c.pred_stem_width = p.value("stem_width", c.pred_stem_width);
        c.pred_stage_widths = p.value("stage_widths", c.pred_stage_widths);
        c.pred_feature_dim = p.value("feature_dim", c.pred_feature_dim);
        c.pred_head_hidden = p.value("head_hidden", c.pred_head_hidden);
        c.pred_train.steps = p.value("steps", c.pred_train.steps);
        c.pred_train.batch_images = p.value("batch_images", c.pred_train.batch_images);
        c.pred_train.lr = p.value("lr", c.pred_train.lr);
        c.pred_train.early_stop_ratio = p.value("early_stop_ratio", c.pred_train.early_stop_ratio);
    }
    if (j.contains("evaluate")) {
        const json& e = j.at("evaluate");
        c.eval.view_counts = e.value("view_counts", c.eval.view_counts);
        c.eval.repetitions = e.value("repetitions", c.eval.repetitions);
        c.eval.seed = e.value("seed", c.eval.seed);
        c.eval.metrics.n_samples = e.value("n_samples", c.eval.metrics.n_samples);
        c.eval.metrics.f_thresholds_hand =
            e.value("f_thresholds_hand", c.eval.metrics.f_thresholds_hand);
        c.eval.metrics.f_thresholds_object =
            e.value("f_thresholds_object", c.eval.metrics.f_thresholds_object);
        c.eval.metrics.seed = e.value("metric_seed", c.eval.metrics.seed);
        c.eval_check_acceptance = e.value("check_acceptance", c.eval_check_acceptance);
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Shared artifact helpers.

namespace pipeline_detail {

inline void require(bool ok, const std::string& what, const std::string& command) {
    if (!ok)
        throw DependencyMissing(what + "; run `svho " + command + "` first", command);
}

inline void log_progress(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

inline ManifestLoad load_dataset(const RunConfig& cfg) {
    require(fs::exists(fs::path(cfg.dataset_dir) / "manifest.jsonl"),
            "no dataset manifest under " + cfg.dataset_dir, "toy-generate");
    ManifestLoad ml = load_manifest(cfg.dataset_dir, ManifestFormat::kObmanStyle);
    for (const auto& w : ml.warnings) log_progress("warning: " + w);
    if (ml.records.empty()) throw std::runtime_error("dataset has no readable frames");
    return ml;
}

inline std::vector<const FrameRecord*> split_records(const ManifestLoad& ml,
                                                     const std::string& split) {
    std::vector<const FrameRecord*> out;
    for (const auto& r : ml.records)
        if (r.split == split) out.push_back(&r);
    return out;
}

inline TsdfGrid tsdf_for(const std::string& mesh_path, const GridSpec& grid) {
    return sample_tsdf_from_mesh(read_obj(mesh_path), grid);
}

inline void write_train_log(const fs::path& path, const std::vector<AeTrainStats>& log) {
    std::string text;
    for (const auto& s : log) {
        json line = {{"step", s.step},        {"recon", s.recon}, {"vq", s.vq},
                     {"commit", s.commit},    {"total", s.total},
                     {"codes_restarted", s.codes_restarted}};
        text += line.dump() + "\n";
    }
    write_text_file(path.string(), text);
}

inline void write_pred_log(const fs::path& path, const std::vector<PredTrainStats>& log) {
    std::string text;
    for (const auto& s : log) {
        json line = {
            {"step", s.step}, {"total", s.total}, {"hand", s.hand}, {"object", s.object}};
        text += line.dump() + "\n";
    }
    write_text_file(path.string(), text);
}

inline std::string codes_file_name(const std::string& frame_id, ShapeClass cls) {
    return frame_id + (cls == ShapeClass::kHand ? "_hand.u16" : "_object.u16");
}

inline void write_codes(const fs::path& path, const LatentCube& cube) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    write_u16_le(os, cube.indices.data(), cube.indices.size());
}

inline LatentCube read_codes(const fs::path& path, int cells_per_axis, int k) {
    LatentCube cube(cells_per_axis, k);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    read_u16_le(is, cube.indices.data(), cube.indices.size());
    cube.validate();
    return cube;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Stages. Each returns the artifact-path JSON the CLI prints as its final
// line; progress goes to stderr.

inline json stage_toy_generate(const RunConfig& cfg, bool force) {
    cfg.validate();
    fs::path manifest = fs::path(cfg.dataset_dir) / "manifest.jsonl";
    if (fs::exists(manifest) && !force) {
        pipeline_detail::log_progress("dataset already present at " + cfg.dataset_dir +
                                      " (use --force to regenerate)");
        return {{"dataset_dir", cfg.dataset_dir}, {"skipped", true}};
    }
    ToySceneConfig toy = cfg.toy;
    toy.seed = cfg.seed;  // one seed drives the whole run
    std::vector<FrameRecord> recs =
        write_toy_dataset(toy, cfg.dataset_dir, cfg.toy_train_count, cfg.toy_test_count);
    pipeline_detail::log_progress("wrote " + std::to_string(recs.size()) + " frames to " +
                                  cfg.dataset_dir);
    return {{"dataset_dir", cfg.dataset_dir},
            {"manifest", manifest.string()},
            {"frames", recs.size()},
            {"skipped", false}};
}

inline json stage_ae_train(const RunConfig& cfg, const std::string& target = "both") {
    cfg.validate();
    if (target != "hand" && target != "object" && target != "both")
        throw std::runtime_error("ae-train target must be hand, object or both");
    ManifestLoad ml = pipeline_detail::load_dataset(cfg);
    std::vector<const FrameRecord*> train = pipeline_detail::split_records(ml, "train");
    if (train.empty()) throw std::runtime_error("dataset has no train split");

    json artifacts;
    for (ShapeClass cls : {ShapeClass::kHand, ShapeClass::kObject}) {
        const bool is_hand = cls == ShapeClass::kHand;
        if ((is_hand && target == "object") || (!is_hand && target == "hand")) continue;
        pipeline_detail::log_progress(std::string("building ") + shape_class_name(cls) +
                                      " TSDFs for " + std::to_string(train.size()) + " frames");
        std::vector<TsdfGrid> shapes;
        shapes.reserve(train.size());
        for (const FrameRecord* r : train)
            shapes.push_back(pipeline_detail::tsdf_for(
                is_hand ? r->hand_mesh_path : r->object_mesh_path, cfg.grid));

        VqVae model(cfg.autoencoder_config(is_hand ? 0 : 1));
        AeTrainConfig tc = cfg.ae_train;
        tc.seed = cfg.seed + (is_hand ? 100 : 200);
        pipeline_detail::log_progress(std::string("training ") + shape_class_name(cls) +
                                      " autoencoder (" + std::to_string(tc.steps) + " steps)");
        std::vector<AeTrainStats> log = train_autoencoder(model, shapes, tc);
        pipeline_detail::log_progress("final loss " + std::to_string(log.back().total) +
                                      " (initial " + std::to_string(log.front().total) + ")");
        save_autoencoder(model, cfg.ae_dir(cls));
        pipeline_detail::write_train_log(cfg.ae_log(cls), log);
        artifacts[std::string("ae_") + shape_class_name(cls)] = cfg.ae_dir(cls).string();
        artifacts[std::string("log_") + shape_class_name(cls)] = cfg.ae_log(cls).string();
    }
    return artifacts;
}

inline json stage_extract_latents(const RunConfig& cfg) {
    cfg.validate();
    pipeline_detail::require(fs::exists(cfg.ae_dir(ShapeClass::kHand) / "manifest.json") &&
                                 fs::exists(cfg.ae_dir(ShapeClass::kObject) / "manifest.json"),
                             "autoencoder checkpoints not found under " + cfg.output_dir,
                             "ae-train");
    ManifestLoad ml = pipeline_detail::load_dataset(cfg);
    std::vector<const FrameRecord*> train = pipeline_detail::split_records(ml, "train");
    if (train.empty()) throw std::runtime_error("dataset has no train split");

    VqVae hand_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kHand));
    VqVae object_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kObject));

    fs::path dir = cfg.latents_dir();
    fs::create_directories(dir / "cubes");
    std::string records;
    for (const FrameRecord* r : train) {
        LatentCube hand =
            hand_ae.encode_to_codes(pipeline_detail::tsdf_for(r->hand_mesh_path, cfg.grid));
        LatentCube object =
            object_ae.encode_to_codes(pipeline_detail::tsdf_for(r->object_mesh_path, cfg.grid));
        std::string hand_file = pipeline_detail::codes_file_name(r->frame_id, ShapeClass::kHand);
        std::string object_file =
            pipeline_detail::codes_file_name(r->frame_id, ShapeClass::kObject);
        pipeline_detail::write_codes(dir / "cubes" / hand_file, hand);
        pipeline_detail::write_codes(dir / "cubes" / object_file, object);
        json line = {{"frame_id", r->frame_id},
                     {"hand_codes", "cubes/" + hand_file},
                     {"object_codes", "cubes/" + object_file}};
        records += line.dump() + "\n";
    }
    write_text_file((dir / "records.jsonl").string(), records);
    json meta = {{"cells_per_axis", hand_ae.cells_per_axis()},
                 {"k_hand", hand_ae.cfg.codebook_size},
                 {"k_object", object_ae.cfg.codebook_size},
                 {"count", train.size()}};
    write_text_file((dir / "meta.json").string(), meta.dump(2) + "\n");
    pipeline_detail::log_progress("extracted latent cubes for " + std::to_string(train.size()) +
                                  " frames");
    return {{"latents_dir", dir.string()},
            {"records", (dir / "records.jsonl").string()},
            {"count", train.size()}};
}

inline json stage_pred_train(const RunConfig& cfg) {
    cfg.validate();
    pipeline_detail::require(fs::exists(cfg.latents_dir() / "records.jsonl"),
                             "latent dataset not found under " + cfg.output_dir,
                             "latents-extract");
    ManifestLoad ml = pipeline_detail::load_dataset(cfg);

    VqVae hand_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kHand));
    VqVae object_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kObject));

    json meta = json::parse(read_text_file((cfg.latents_dir() / "meta.json").string()));
    const int cells = meta.at("cells_per_axis").get<int>();
    const int k_hand = meta.at("k_hand").get<int>();
    const int k_object = meta.at("k_object").get<int>();

    std::map<std::string, const FrameRecord*> by_id;
    for (const auto& r : ml.records) by_id[r.frame_id] = &r;

    std::vector<LatentViewRecord> records;
    {
        std::ifstream f(cfg.latents_dir() / "records.jsonl");
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            std::string fid = j.at("frame_id").get<std::string>();
            auto it = by_id.find(fid);
            if (it == by_id.end())
                throw std::runtime_error("latent record " + fid + " missing from dataset");
            LatentCube hand = pipeline_detail::read_codes(
                cfg.latents_dir() / j.at("hand_codes").get<std::string>(), cells, k_hand);
            LatentCube object = pipeline_detail::read_codes(
                cfg.latents_dir() / j.at("object_codes").get<std::string>(), cells, k_object);
            for (std::size_t v = 0; v < it->second->views.size(); ++v) {
                LatentViewRecord rec;
                rec.frame_id = fid;
                rec.view = it->second->load_view(v);
                rec.hand_codes = hand;
                rec.object_codes = object;
                records.push_back(std::move(rec));
            }
        }
    }
    if (records.empty()) throw std::runtime_error("no predictor training records");
    pipeline_detail::log_progress("loaded " + std::to_string(records.size()) +
                                  " supervised views");

    ClassWeights hand_w{identify_empty_index(hand_ae), 0.25, 0.75};
    ClassWeights object_w{identify_empty_index(object_ae), 0.25, 0.75};
    pipeline_detail::log_progress("empty-space indices: hand " +
                                  std::to_string(hand_w.empty_index) + ", object " +
                                  std::to_string(object_w.empty_index));

    Predictor model(cfg.predictor_config(k_hand, k_object));
    PredTrainConfig tc = cfg.pred_train;
    tc.seed = cfg.seed + 300;
    pipeline_detail::log_progress("training predictor (" + std::to_string(tc.steps) + " steps)");
    std::vector<PredTrainStats> log = train_predictor(model, records, hand_w, object_w, tc);
    pipeline_detail::log_progress("final loss " + std::to_string(log.back().total) +
                                  " (initial " + std::to_string(log.front().total) + ")");
    save_predictor(model, cfg.predictor_dir());
    pipeline_detail::write_pred_log(cfg.predictor_log(), log);
    return {{"predictor", cfg.predictor_dir().string()},
            {"log", cfg.predictor_log().string()}};
}

inline void require_reconstruction_artifacts(const RunConfig& cfg) {
    pipeline_detail::require(fs::exists(cfg.ae_dir(ShapeClass::kHand) / "manifest.json") &&
                                 fs::exists(cfg.ae_dir(ShapeClass::kObject) / "manifest.json"),
                             "autoencoder checkpoints not found under " + cfg.output_dir,
                             "ae-train");
    pipeline_detail::require(fs::exists(cfg.predictor_dir() / "manifest.json"),
                             "predictor checkpoint not found under " + cfg.output_dir,
                             "pred-train");
}

inline json stage_reconstruct(const RunConfig& cfg, const std::string& frame_id,
                              const std::vector<int>& view_ids) {
    cfg.validate();
    require_reconstruction_artifacts(cfg);
    ManifestLoad ml = pipeline_detail::load_dataset(cfg);
    const FrameRecord* frame = nullptr;
    for (const auto& r : ml.records)
        if (r.frame_id == frame_id) frame = &r;
    if (!frame) throw std::runtime_error("frame " + frame_id + " not found in dataset");

    VqVae hand_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kHand));
    VqVae object_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kObject));
    Predictor predictor = load_predictor(cfg.predictor_dir());

    ViewSet vs;
    vs.views = frame->load_all_views();
    vs.selected = view_ids;
    ReconstructionResult rr = reconstruct(vs, predictor, hand_ae, object_ae);
    write_reconstruction(rr, cfg.reconstructions_dir(), frame_id);
    fs::path dir = cfg.reconstructions_dir();
    return {{"hand_mesh", (dir / (frame_id + "_hand.obj")).string()},
            {"object_mesh", (dir / (frame_id + "_object.obj")).string()},
            {"sidecar", (dir / (frame_id + "_reconstruction.json")).string()},
            {"view_ids", rr.used_view_ids}};
}

// Acceptance verdict on a finished report: hand F-score@5mm must not degrade
// from 1 to 4 views and fused per-cell accuracy at 4 views must clear 80%.
struct AcceptanceCheck {
    bool passed = false;
    double fs_h_1 = 0.0, fs_h_4 = 0.0;
    double cell_acc_h = 0.0, cell_acc_o = 0.0;
    std::string detail;
};

inline AcceptanceCheck check_toy_acceptance(const EvalReport& report) {
    AcceptanceCheck out;
    const auto& taus = report.cfg.metrics.f_thresholds_hand;
    int tau_idx = -1;
    for (std::size_t t = 0; t < taus.size(); ++t)
        if (std::abs(taus[t] - 0.005) < 1e-9) tau_idx = static_cast<int>(t);
    const ViewCountAggregate* agg1 = nullptr;
    const ViewCountAggregate* agg4 = nullptr;
    for (const auto& a : report.aggregates) {
        if (a.view_count == 1) agg1 = &a;
        if (a.view_count == 4) agg4 = &a;
    }
    if (tau_idx < 0 || !agg1 || !agg4) {
        out.detail = "report lacks the 5mm hand threshold or view counts 1 and 4";
        return out;
    }
    out.fs_h_1 = agg1->fs_h_mean[static_cast<std::size_t>(tau_idx)];
    out.fs_h_4 = agg4->fs_h_mean[static_cast<std::size_t>(tau_idx)];
    out.cell_acc_h = agg4->cell_acc_h_mean;
    out.cell_acc_o = agg4->cell_acc_o_mean;
    bool trend = out.fs_h_4 >= out.fs_h_1;
    bool acc = out.cell_acc_h > 0.8 && out.cell_acc_o > 0.8;
    out.passed = trend && acc;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "fs_h@5mm: 1 view %.4f, 4 views %.4f (%s); cell accuracy at 4 views: hand "
                  "%.4f, object %.4f (%s)",
                  out.fs_h_1, out.fs_h_4, trend ? "ok" : "DEGRADED", out.cell_acc_h,
                  out.cell_acc_o, acc ? "ok" : "BELOW 0.8");
    out.detail = buf;
    return out;
}

inline std::pair<json, EvalReport> stage_evaluate(const RunConfig& cfg) {
    cfg.validate();
    require_reconstruction_artifacts(cfg);
    ManifestLoad ml = pipeline_detail::load_dataset(cfg);
    std::vector<const FrameRecord*> test = pipeline_detail::split_records(ml, "test");
    if (test.empty()) throw std::runtime_error("dataset has no test split");

    VqVae hand_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kHand));
    VqVae object_ae = load_autoencoder(cfg.ae_dir(ShapeClass::kObject));
    Predictor predictor = load_predictor(cfg.predictor_dir());

    pipeline_detail::log_progress("preparing " + std::to_string(test.size()) + " eval frames");
    std::vector<EvalFrame> frames;
    frames.reserve(test.size());
    for (const FrameRecord* r : test) {
        EvalFrame f;
        f.frame_id = r->frame_id;
        f.object_label = r->object_label;
        f.views = r->load_all_views();
        f.hand_gt = read_obj(r->hand_mesh_path);
        f.object_gt = read_obj(r->object_mesh_path);
        f.hand_codes_gt =
            hand_ae.encode_to_codes(pipeline_detail::tsdf_for(r->hand_mesh_path, cfg.grid));
        f.object_codes_gt =
            object_ae.encode_to_codes(pipeline_detail::tsdf_for(r->object_mesh_path, cfg.grid));
        frames.push_back(std::move(f));
    }

    EvalRunConfig ec = cfg.eval;
    ec.seed = cfg.seed + 400;
    pipeline_detail::log_progress("running ablation (" + std::to_string(ec.view_counts.size()) +
                                  " view counts x " + std::to_string(ec.repetitions) +
                                  " repetitions)");
    EvalReport report = evaluate_run(frames, predictor, hand_ae, object_ae, ec);
    std::vector<std::string> written = write_eval_report(report, cfg.report_dir());

    json artifacts = {{"report_dir", cfg.report_dir().string()}, {"files", written}};
    return {artifacts, report};
}

// Regenerates the plot-data CSVs from an existing report.json.
inline json stage_plot(const RunConfig& cfg) {
    cfg.validate();
    fs::path report_path = cfg.report_dir() / "report.json";
    pipeline_detail::require(fs::exists(report_path),
                             "no evaluation report under " + cfg.output_dir, "evaluate");
    json j = json::parse(read_text_file(report_path.string()));

    EvalReport report;
    report.cfg.view_counts = j.at("config").at("view_counts").get<std::vector<int>>();
    report.cfg.repetitions = j.at("config").at("repetitions").get<int>();
    report.cfg.seed = j.at("config").at("seed").get<std::uint64_t>();
    report.cfg.metrics.n_samples = j.at("config").at("n_samples").get<int>();
    report.cfg.metrics.f_thresholds_hand =
        j.at("config").at("f_thresholds_hand").get<std::vector<double>>();
    report.cfg.metrics.f_thresholds_object =
        j.at("config").at("f_thresholds_object").get<std::vector<double>>();
    report.cfg.metrics.seed = j.at("config").at("metric_seed").get<std::uint64_t>();
    for (const json& fj : j.at("frames")) {
        FrameEvalRow f;
        f.frame_id = fj.at("frame_id").get<std::string>();
        f.object_label = fj.at("object_label").get<std::string>();
        f.view_count = fj.at("view_count").get<int>();
        f.repetition = fj.at("repetition").get<int>();
        f.view_ids = fj.at("view_ids").get<std::vector<int>>();
        f.hand_failed = fj.at("hand_failed").get<bool>();
        f.object_failed = fj.at("object_failed").get<bool>();
        f.cd_h = fj.at("cd_h_cm2").get<double>();
        f.cd_o = fj.at("cd_o_cm2").get<double>();
        f.fs_h = fj.at("fs_h").get<std::vector<double>>();
        f.fs_o = fj.at("fs_o").get<std::vector<double>>();
        f.cell_acc_h = fj.at("cell_acc_h").get<double>();
        f.cell_acc_o = fj.at("cell_acc_o").get<double>();
        report.frames.push_back(std::move(f));
    }
    for (const json& pj : j.at("repetitions")) {
        RepetitionRow p;
        p.view_count = pj.at("view_count").get<int>();
        p.repetition = pj.at("repetition").get<int>();
        p.frames = pj.at("frames").get<int>();
        p.hand_failures = pj.at("hand_failures").get<int>();
        p.object_failures = pj.at("object_failures").get<int>();
        p.cd_h = pj.at("cd_h_cm2").get<double>();
        p.cd_o = pj.at("cd_o_cm2").get<double>();
        p.fs_h = pj.at("fs_h").get<std::vector<double>>();
        p.fs_o = pj.at("fs_o").get<std::vector<double>>();
        p.cell_acc_h = pj.at("cell_acc_h").get<double>();
        p.cell_acc_o = pj.at("cell_acc_o").get<double>();
        report.repetitions.push_back(std::move(p));
    }
    for (const json& aj : j.at("aggregates")) {
        ViewCountAggregate a;
        a.view_count = aj.at("view_count").get<int>();
        a.cd_h_mean = aj.at("cd_h_mean").get<double>();
        a.cd_h_std = aj.at("cd_h_std").get<double>();
        a.cd_o_mean = aj.at("cd_o_mean").get<double>();
        a.cd_o_std = aj.at("cd_o_std").get<double>();
        a.fs_h_mean = aj.at("fs_h_mean").get<std::vector<double>>();
        a.fs_h_std = aj.at("fs_h_std").get<std::vector<double>>();
        a.fs_o_mean = aj.at("fs_o_mean").get<std::vector<double>>();
        a.fs_o_std = aj.at("fs_o_std").get<std::vector<double>>();
        a.cell_acc_h_mean = aj.at("cell_acc_h_mean").get<double>();
        a.cell_acc_o_mean = aj.at("cell_acc_o_mean").get<double>();
        a.hand_failures = aj.at("hand_failures").get<int>();
        a.object_failures = aj.at("object_failures").get<int>();
        report.aggregates.push_back(std::move(a));
    }
    std::vector<std::string> written = write_eval_report(report, cfg.report_dir());
    return {{"report_dir", cfg.report_dir().string()}, {"files", written}};
}

}  // namespace svho
