#include <catch2/catch_amalgamated.hpp>
#include <svho/datasets.hpp>
#include <svho/fusion.hpp>

#include <filesystem>

using namespace svho;
using Catch::Approx;

namespace {

// random simplex rows so every cube is a valid distribution
ViewProbabilities random_probs(int s, int k, int view_id, Rng& rng,
                               ShapeClass cls = ShapeClass::kHand) {
    ViewProbabilities p;
    p.cells_per_axis = s;
    p.k = k;
    p.view_id = view_id;
    p.shape_class = cls;
    p.probs.resize(static_cast<std::size_t>(s) * s * s * k);
    for (std::size_t c = 0; c < p.cell_count(); ++c) {
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            double x = rng.uniform(0.01, 1.0);
            p.probs[c * k + j] = static_cast<float>(x);
            sum += x;
        }
        for (int j = 0; j < k; ++j) p.probs[c * k + j] /= static_cast<float>(sum);
    }
    return p;
}

}  // namespace

TEST_CASE("fusion averages the per-view distributions", "[fusion]") {
    Rng rng(1, 0);
    const int s = 2;
    for (int trial = 0; trial < 50; ++trial) {
        int k = 2 + static_cast<int>(rng.uniform_u32(7));
        int n_views = 1 + static_cast<int>(rng.uniform_u32(5));
        std::vector<ViewProbabilities> per_view;
        for (int v = 0; v < n_views; ++v) per_view.push_back(random_probs(s, k, v, rng));

        ViewProbabilities fused = fuse(per_view);
        REQUIRE(fused.view_id == -1);
        REQUIRE_NOTHROW(fused.validate());

        for (std::size_t c = 0; c < fused.cell_count(); ++c)
            for (int j = 0; j < k; ++j) {
                double mean = 0.0;
                for (const auto& vp : per_view) mean += vp.probs[c * k + j];
                mean /= n_views;
                REQUIRE(fused.probs[c * k + j] == Approx(mean).margin(1e-7));
            }
    }
}

TEST_CASE("fusion is invariant to view order", "[fusion]") {
    Rng rng(2, 0);
    std::vector<ViewProbabilities> per_view;
    for (int v = 0; v < 5; ++v) per_view.push_back(random_probs(2, 6, v, rng));

    ViewProbabilities base = fuse(per_view);
    Rng shuffle_rng(3, 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<ViewProbabilities> shuffled = per_view;
        // Fisher-Yates with our deterministic rng
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[shuffle_rng.uniform_u32(static_cast<std::uint32_t>(i))]);
        ViewProbabilities out = fuse(shuffled);
        REQUIRE(out.probs == base.probs);  // bitwise, not approximately
    }
}

TEST_CASE("fusing a single view returns it unchanged", "[fusion]") {
    Rng rng(4, 0);
    ViewProbabilities p = random_probs(2, 4, 7, rng);
    ViewProbabilities fused = fuse({p});
    REQUIRE(fused.probs == p.probs);
    REQUIRE(fused.view_id == -1);
}

TEST_CASE("fused values stay inside the per-view envelope", "[fusion]") {
    Rng rng(5, 0);
    std::vector<ViewProbabilities> per_view;
    for (int v = 0; v < 4; ++v) per_view.push_back(random_probs(2, 5, v, rng));
    ViewProbabilities fused = fuse(per_view);
    for (std::size_t i = 0; i < fused.probs.size(); ++i) {
        float lo = per_view[0].probs[i], hi = per_view[0].probs[i];
        for (const auto& vp : per_view) {
            lo = std::min(lo, vp.probs[i]);
            hi = std::max(hi, vp.probs[i]);
        }
        REQUIRE(fused.probs[i] >= lo - 1e-7f);
        REQUIRE(fused.probs[i] <= hi + 1e-7f);
    }
}

TEST_CASE("fusion rejects mismatched cubes", "[fusion]") {
    Rng rng(6, 0);
    ViewProbabilities a = random_probs(2, 4, 0, rng);
    REQUIRE_THROWS(fuse({}));
    ViewProbabilities wrong_k = random_probs(2, 5, 1, rng);
    REQUIRE_THROWS_WITH(fuse({a, wrong_k}), Catch::Matchers::ContainsSubstring("codebook"));
    ViewProbabilities wrong_res = random_probs(3, 4, 1, rng);
    REQUIRE_THROWS_WITH(fuse({a, wrong_res}), Catch::Matchers::ContainsSubstring("resolution"));
    ViewProbabilities wrong_cls = random_probs(2, 4, 1, rng, ShapeClass::kObject);
    REQUIRE_THROWS_WITH(fuse({a, wrong_cls}), Catch::Matchers::ContainsSubstring("class"));
}

TEST_CASE("index selection takes the argmax with smallest-index ties", "[fusion]") {
    ViewProbabilities p;
    p.cells_per_axis = 1;
    p.k = 4;

    p.probs = {0.1f, 0.5f, 0.3f, 0.1f};
    REQUIRE(select_indices(p).indices[0] == 1);

    // exact two-way tie
    p.probs = {0.2f, 0.3f, 0.3f, 0.2f};
    REQUIRE(select_indices(p).indices[0] == 1);

    // all equal
    p.probs = {0.25f, 0.25f, 0.25f, 0.25f};
    REQUIRE(select_indices(p).indices[0] == 0);

    // argmax only depends on relative order, so a positive rescale of the
    // row (select_indices does not renormalize) keeps the winner
    Rng rng(7, 0);
    ViewProbabilities q = random_probs(2, 6, 0, rng);
    LatentCube base = select_indices(q);
    ViewProbabilities scaled = q;
    for (auto& x : scaled.probs) x *= 4.0f;
    REQUIRE(select_indices(scaled).indices == base.indices);

    LatentCube cube = select_indices(q);
    REQUIRE(cube.cells_per_axis == 2);
    REQUIRE(cube.codebook_size == 6);
}

TEST_CASE("make_fused_prediction couples the cube to its argmax", "[fusion]") {
    Rng rng(8, 0);
    std::vector<ViewProbabilities> per_view;
    for (int v = 0; v < 3; ++v)
        per_view.push_back(random_probs(2, 5, v, rng, ShapeClass::kObject));
    FusedPrediction fp = make_fused_prediction(per_view);
    REQUIRE(fp.shape_class == ShapeClass::kObject);
    REQUIRE(fp.z_hat.indices == select_indices(fp.probs).indices);
}

TEST_CASE("entropy summary spans one-hot to uniform", "[fusion]") {
    ViewProbabilities p;
    p.cells_per_axis = 1;
    p.k = 8;
    p.probs.assign(8, 0.125f);
    EntropySummary uniform = entropy_summary(p);
    REQUIRE(uniform.mean == Approx(std::log(8.0)).margin(1e-6));
    REQUIRE(uniform.min == Approx(uniform.max).margin(1e-12));

    p.probs.assign(8, 0.0f);
    p.probs[3] = 1.0f;
    EntropySummary onehot = entropy_summary(p);
    REQUIRE(onehot.mean == 0.0);
    REQUIRE(onehot.min == 0.0);
    REQUIRE(onehot.max == 0.0);

    // mixed cube: min/max bracket the mean
    p.cells_per_axis = 2;
    p.probs.assign(8 * 8, 0.0f);
    for (std::size_t c = 0; c < 8; ++c) {
        if (c % 2 == 0) {
            p.probs[c * 8 + 1] = 1.0f;
        } else {
            for (int j = 0; j < 8; ++j) p.probs[c * 8 + j] = 0.125f;
        }
    }
    EntropySummary mixed = entropy_summary(p);
    REQUIRE(mixed.min == 0.0);
    REQUIRE(mixed.max == Approx(std::log(8.0)).margin(1e-6));
    REQUIRE(mixed.mean == Approx(0.5 * std::log(8.0)).margin(1e-6));
}

TEST_CASE("view sets validate selections", "[fusion]") {
    ToySceneConfig cfg;
    cfg.seed = 31;
    cfg.camera_count = 3;
    cfg.image_size = 32;
    cfg.clutter_count = 0;
    ToyScene scene = generate_toy_scene(cfg, 0);
    render_toy_views(scene);

    ViewSet vs;
    vs.views = scene.views;
    vs.selected = {0, 2};
    REQUIRE_NOTHROW(vs.validate());
    REQUIRE(vs.view_by_id(2).view_id == 2);

    ViewSet empty_sel = vs;
    empty_sel.selected.clear();
    REQUIRE_THROWS_WITH(empty_sel.validate(), Catch::Matchers::ContainsSubstring("no views"));

    ViewSet bad_id = vs;
    bad_id.selected = {0, 5};
    REQUIRE_THROWS_WITH(bad_id.validate(), Catch::Matchers::ContainsSubstring("not present"));
    REQUIRE_THROWS(vs.view_by_id(9));

    ViewSet dup = vs;
    dup.views.push_back(dup.views[0]);
    REQUIRE_THROWS_WITH(dup.validate(), Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("reconstruction decodes fused predictions into meshes", "[fusion]") {
    // tiny models wired to a rendered toy frame
    VqVaeConfig ac;
    ac.grid = GridSpec::centered(16, 0.2, 0.05);
    ac.patches = PatchSpec{2, 8};
    ac.latent_dim = 8;
    ac.codebook_size = 16;
    ac.decoder_hidden = 32;
    ac.seed = 5;
    VqVae hand_ae(ac);
    ac.seed = 6;
    ac.codebook_size = 12;
    VqVae object_ae(ac);

    PredictorConfig pc;
    pc.grid = ac.grid;
    pc.cells_per_axis = 2;
    pc.k_hand = 16;
    pc.k_object = 12;
    pc.stem_width = 8;
    pc.stage_widths = {8, 8, 12, 12};
    pc.feature_dim = 12;
    pc.head_hidden = 16;
    pc.seed = 7;
    Predictor predictor(pc);

    ToySceneConfig cfg;
    cfg.seed = 32;
    cfg.camera_count = 4;
    cfg.image_size = 32;
    cfg.clutter_count = 1;
    ToyScene scene = generate_toy_scene(cfg, 1);
    render_toy_views(scene);

    ViewSet vs;
    vs.views = scene.views;
    vs.selected = {3, 0, 2};  // deliberately unsorted

    ReconstructionResult r = reconstruct(vs, predictor, hand_ae, object_ae);
    REQUIRE(r.used_view_ids == std::vector<int>{0, 2, 3});
    REQUIRE(r.hand.shape_class == ShapeClass::kHand);
    REQUIRE(r.object.shape_class == ShapeClass::kObject);
    REQUIRE(r.hand.probs.k == 16);
    REQUIRE(r.object.probs.k == 12);
    REQUIRE_NOTHROW(r.hand.probs.validate());

    // rebuilding by hand through the public pieces gives the same cubes
    std::vector<ViewProbabilities> hand_probs;
    for (int id : r.used_view_ids)
        hand_probs.push_back(predictor.predict_view(vs.view_by_id(id), ShapeClass::kHand));
    FusedPrediction manual = make_fused_prediction(hand_probs);
    REQUIRE(manual.probs.probs == r.hand.probs.probs);
    REQUIRE(manual.z_hat.indices == r.hand.z_hat.indices);

    SECTION("model shape mismatches are rejected") {
        PredictorConfig bad = pc;
        bad.k_hand = 8;
        Predictor wrong_k(bad);
        REQUIRE_THROWS_WITH(reconstruct(vs, wrong_k, hand_ae, object_ae),
                            Catch::Matchers::ContainsSubstring("codebook size mismatch"));
    }

    SECTION("written artifacts round-trip") {
        namespace fs = std::filesystem;
        fs::path dir = fs::temp_directory_path() / "svho_recon_test";
        fs::remove_all(dir);
        write_reconstruction(r, dir, scene.frame_id);

        fs::path hand_path = dir / (scene.frame_id + "_hand.obj");
        fs::path object_path = dir / (scene.frame_id + "_object.obj");
        fs::path sidecar_path = dir / (scene.frame_id + "_reconstruction.json");
        REQUIRE(fs::exists(hand_path));
        REQUIRE(fs::exists(object_path));
        REQUIRE(fs::exists(sidecar_path));

        Mesh hand_back = read_obj(hand_path.string());
        REQUIRE(hand_back.vertices.size() == r.hand_mesh.vertices.size());
        REQUIRE(hand_back.triangles.size() == r.hand_mesh.triangles.size());

        json sidecar = json::parse(read_text_file(sidecar_path.string()));
        REQUIRE(sidecar.at("frame_id") == scene.frame_id);
        REQUIRE(sidecar.at("view_ids").get<std::vector<int>>() == r.used_view_ids);
        REQUIRE(sidecar.at("hand").at("vertices").get<std::size_t>() ==
                r.hand_mesh.vertices.size());
        REQUIRE(sidecar.at("object").at("entropy").contains("mean"));

        fs::remove_all(dir);
    }
}
