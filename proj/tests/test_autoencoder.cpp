#include <catch2/catch_amalgamated.hpp>
#include <svho/autoencoder.hpp>

#include <filesystem>

using namespace svho;
using Catch::Approx;

namespace {

VqVaeConfig tiny_config(std::uint64_t seed = 5) {
    VqVaeConfig cfg;
    cfg.grid = GridSpec::centered(16, 0.2, 0.05);
    cfg.patches = PatchSpec{2, 8};
    cfg.latent_dim = 8;
    cfg.codebook_size = 16;
    cfg.decoder_hidden = 32;
    cfg.seed = seed;
    return cfg;
}

TsdfGrid sphere_tsdf(const GridSpec& spec, double radius, Vec3 center = {}) {
    TsdfGrid g(spec);
    for (int i = 0; i < spec.resolution; ++i)
        for (int j = 0; j < spec.resolution; ++j)
            for (int k = 0; k < spec.resolution; ++k) {
                Vec3 p = spec.voxel_center(i, j, k);
                double d = (p - center).norm() - radius;
                g.at(i, j, k) = static_cast<float>(
                    std::clamp(d, -spec.truncation, spec.truncation));
            }
    return g;
}

double dot_grads(const std::vector<nn::Param*>& params,
                 const std::vector<std::vector<float>>& dirs) {
    double acc = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < dirs[pi].size(); ++i)
            acc += static_cast<double>(params[pi]->grad[i]) * dirs[pi][i];
    return acc;
}

void nudge(const std::vector<nn::Param*>& params, const std::vector<std::vector<float>>& dirs,
           double h) {
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < dirs[pi].size(); ++i)
            params[pi]->value[i] += static_cast<float>(h * dirs[pi][i]);
}

// unit-norm random direction over the whole parameter set, so the step h is
// the true perturbation magnitude
std::vector<std::vector<float>> random_direction(const std::vector<nn::Param*>& params, Rng& rng) {
    std::vector<std::vector<float>> dirs(params.size());
    double norm2 = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        dirs[pi].resize(params[pi]->value.size());
        for (auto& d : dirs[pi]) {
            d = static_cast<float>(rng.normal());
            norm2 += static_cast<double>(d) * d;
        }
    }
    float inv = static_cast<float>(1.0 / std::sqrt(norm2));
    for (auto& block : dirs)
        for (auto& d : block) d *= inv;
    return dirs;
}

}  // namespace

TEST_CASE("config validation rejects bad layouts", "[autoencoder]") {
    VqVaeConfig cfg = tiny_config();
    REQUIRE_NOTHROW(cfg.validate());

    VqVaeConfig odd = cfg;
    odd.patches.patch_resolution = 6;  // not a power of two
    odd.grid.resolution = 12;
    REQUIRE_THROWS(odd.validate());

    VqVaeConfig big = cfg;
    big.codebook_size = 70000;  // does not fit the u16 code storage
    REQUIRE_THROWS(big.validate());

    VqVaeConfig misaligned = cfg;
    misaligned.grid.resolution = 24;  // not patches * patch_resolution
    REQUIRE_THROWS(misaligned.validate());
}

TEST_CASE("encoder weights are shared across patches", "[autoencoder]") {
    VqVae model(tiny_config());
    const GridSpec& spec = model.cfg.grid;

    // tile one random patch into every patch slot; the shared encoder maps
    // each slot to the same latent and the border-clamped mixers keep the
    // latent grid constant, so every cell must land on the same code
    Rng rng(3, 0);
    const int r = model.cfg.patches.patch_resolution;
    std::vector<float> tile(static_cast<std::size_t>(r) * r * r);
    for (auto& v : tile)
        v = static_cast<float>(rng.uniform(-spec.truncation, spec.truncation));

    TsdfGrid g(spec);
    const int P = model.cfg.patches.patches_per_axis;
    for (int i = 0; i < spec.resolution; ++i)
        for (int j = 0; j < spec.resolution; ++j)
            for (int k = 0; k < spec.resolution; ++k) {
                std::size_t local = (static_cast<std::size_t>(i % r) * r + (j % r)) * r + (k % r);
                g.at(i, j, k) = tile[local];
            }

    LatentCube codes = model.encode_to_codes(g);
    REQUIRE(codes.cell_count() == static_cast<std::size_t>(P) * P * P);
    for (auto c : codes.indices) REQUIRE(c == codes.indices[0]);

    // the pre-quantization latent grid is constant too
    std::vector<float> mixed = model.encode_grid_latent(g);
    REQUIRE(mixed.size() == static_cast<std::size_t>(model.cfg.latent_dim) * codes.cell_count());
    std::size_t cells = codes.cell_count();
    for (int c = 0; c < model.cfg.latent_dim; ++c)
        for (std::size_t i = 1; i < cells; ++i)
            REQUIRE(mixed[c * cells + i] == Approx(mixed[c * cells]).margin(1e-6));
}

TEST_CASE("decoder inputs gather the latent trilinearly", "[autoencoder]") {
    VqVae model(tiny_config());
    const int v = model.cfg.latent_dim;
    const int P = model.cfg.patches.patches_per_axis;
    const std::size_t cells = model.cell_count();

    Rng rng(4, 0);
    std::vector<float> cube(v * cells);
    for (auto& x : cube) x = static_cast<float>(rng.normal() * 0.1);

    const GridSpec& spec = model.cfg.grid;
    double cell_size = 2.0 * spec.half_extent / P;

    // world point at the center of latent cell (1, 0, 1)
    Vec3 center{spec.origin.x + 1.5 * cell_size, spec.origin.y + 0.5 * cell_size,
                spec.origin.z + 1.5 * cell_size};
    std::vector<float> rows = model.build_decoder_inputs(cube, {center});
    REQUIRE(rows.size() == static_cast<std::size_t>(v) + 3);
    std::size_t ci = (static_cast<std::size_t>(1) * P + 0) * P + 1;
    for (int c = 0; c < v; ++c) REQUIRE(rows[c] == Approx(cube[c * cells + ci]).margin(1e-6));

    // midpoint of two adjacent cell centers carries their mean
    Vec3 other{center.x, center.y, center.z - cell_size};
    Vec3 mid{center.x, center.y, center.z - 0.5 * cell_size};
    std::vector<float> mrows = model.build_decoder_inputs(cube, {mid});
    std::size_t cj = (static_cast<std::size_t>(1) * P + 0) * P + 0;
    for (int c = 0; c < v; ++c)
        REQUIRE(mrows[c] ==
                Approx(0.5 * (cube[c * cells + ci] + cube[c * cells + cj])).margin(1e-6));

    // decode_sdf at the midpoint equals the decoder run on those mean inputs
    double direct = model.decode_sdf(cube, mid);
    std::vector<float> out = model.mlp_forward(mrows, 1);
    REQUIRE(direct == Approx(static_cast<double>(out[0]) * spec.truncation).margin(1e-9));
    (void)other;
}

TEST_CASE("decoding is deterministic and clamped", "[autoencoder]") {
    VqVae model(tiny_config());
    TsdfGrid shape = sphere_tsdf(model.cfg.grid, 0.08);
    LatentCube codes = model.encode_to_codes(shape);

    TsdfGrid a = model.decode_codes(codes);
    TsdfGrid b = model.decode_codes(codes);
    REQUIRE(a.values == b.values);
    REQUIRE(a.spec == model.cfg.grid);

    double t = model.cfg.grid.truncation;
    for (float v : a.values) {
        REQUIRE(v <= t + 1e-9);
        REQUIRE(v >= -t - 1e-9);
    }

    // decode_codes is exactly decode of the looked-up cube
    TsdfGrid c = model.decode_latent_cube(model.book.lookup_cube(codes));
    REQUIRE(a.values == c.values);
}

TEST_CASE("straight-through gradients match finite differences", "[autoencoder]") {
    VqVae model(tiny_config(11));
    TsdfGrid shape = sphere_tsdf(model.cfg.grid, 0.09);

    AeTrainConfig tc;
    tc.steps = 1;
    tc.samples_per_shape = 256;
    AeTrainer trainer(model, tc);

    Rng rng(21, 0);
    auto near = find_near_surface_voxels(shape);
    AePointBatch pts = sample_training_points(shape, near, 256, rng);

    // capture the quantization residual at the base point; the frozen pass
    // feeds the decoder mixed + offset, which both pins the codebook out of
    // the loop and makes the loss differentiable along the latent path
    trainer.zero_grads();
    auto base = trainer.forward_backward(shape, pts, 0.0);
    const std::size_t cells = model.cell_count();
    std::vector<float> quantized(base.mixed.size());
    model.book.quantize_cube(base.mixed, model.cells_per_axis(), &quantized);
    std::vector<float> offset(base.mixed.size());
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = quantized[i] - base.mixed[i];

    // analytic gradient of the frozen reconstruction loss
    std::vector<nn::Param*> params = model.params();
    trainer.zero_grads();
    auto frozen = trainer.forward_backward(shape, pts, 1.0, &offset);
    REQUIRE(frozen.recon == Approx(base.recon).margin(1e-9));

    bool any_encoder_grad = false;
    for (nn::Param* p : params)
        if (p->name.rfind("encoder", 0) == 0 || p->name.rfind("mixer", 0) == 0)
            for (float g : p->grad) any_encoder_grad |= g != 0.0f;
    REQUIRE(any_encoder_grad);

    Rng drng(31, 0);
    const double h = 2e-3;
    int checked = 0;
    for (int trial = 0; trial < 4; ++trial) {
        std::vector<std::vector<float>> dirs = random_direction(params, drng);
        double analytic = dot_grads(params, dirs);

        nudge(params, dirs, h);
        double lp = trainer.forward_backward(shape, pts, 0.0, &offset).recon;
        nudge(params, dirs, -2 * h);
        double lm = trainer.forward_backward(shape, pts, 0.0, &offset).recon;
        nudge(params, dirs, h);

        double numeric = (lp - lm) / (2 * h);
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        REQUIRE(std::abs(analytic - numeric) / denom < 5e-3);
        ++checked;
    }
    REQUIRE(checked == 4);
    (void)cells;
}

TEST_CASE("commitment gradients match finite differences", "[autoencoder]") {
    VqVae model(tiny_config(13));
    TsdfGrid shape = sphere_tsdf(model.cfg.grid, 0.07, {0.02, -0.01, 0.0});

    AeTrainConfig tc;
    tc.steps = 1;
    AeTrainer trainer(model, tc);

    Rng rng(22, 0);
    auto near = find_near_surface_voxels(shape);
    AePointBatch pts = sample_training_points(shape, near, 128, rng);

    std::vector<nn::Param*> params = model.params();

    trainer.zero_grads();
    auto base = trainer.forward_backward(shape, pts, 0.0);
    LatentCube base_codes =
        model.book.quantize_cube(base.mixed, model.cells_per_axis());
    std::vector<float> quantized(base.mixed.size());
    model.book.quantize_cube(base.mixed, model.cells_per_axis(), &quantized);
    std::vector<float> offset(base.mixed.size());
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = quantized[i] - base.mixed[i];

    // full pass gradient = straight-through recon + commitment; the frozen
    // pass reproduces exactly the recon part, so the difference isolates the
    // commitment gradient
    trainer.zero_grads();
    trainer.forward_backward(shape, pts, 1.0);
    std::vector<std::vector<float>> full_grads;
    for (nn::Param* p : params) full_grads.push_back(p->grad);

    trainer.zero_grads();
    trainer.forward_backward(shape, pts, 1.0, &offset);
    std::vector<std::vector<float>> commit_grads = full_grads;
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < commit_grads[pi].size(); ++i)
            commit_grads[pi][i] -= params[pi]->grad[i];

    Rng drng(32, 0);
    const double h = 2e-3;
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<std::vector<float>> dirs = random_direction(params, drng);
        double analytic = 0.0;
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            for (std::size_t i = 0; i < dirs[pi].size(); ++i)
                analytic += static_cast<double>(commit_grads[pi][i]) * dirs[pi][i];

        nudge(params, dirs, h);
        auto plus = trainer.forward_backward(shape, pts, 0.0);
        LatentCube cp = model.book.quantize_cube(plus.mixed, model.cells_per_axis());
        nudge(params, dirs, -2 * h);
        auto minus = trainer.forward_backward(shape, pts, 0.0);
        LatentCube cm = model.book.quantize_cube(minus.mixed, model.cells_per_axis());
        nudge(params, dirs, h);

        // the commitment term is only differentiable while the assignment is
        // stable; this perturbation is small enough that it is
        REQUIRE(cp.indices == base_codes.indices);
        REQUIRE(cm.indices == base_codes.indices);

        double numeric = (plus.commit - minus.commit) / (2 * h);
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        REQUIRE(std::abs(analytic - numeric) / denom < 5e-3);
    }
}

TEST_CASE("codebook loss gradient matches its closed form", "[autoencoder]") {
    // d/d e of mean_c ||z_c - e_{a(c)}||^2 is 2 (e - z_c) / cells summed over
    // the cells assigned to e; checked against finite differences of the
    // loss value itself
    const int v = 4;
    const std::size_t n = 6;
    Rng rng(41, 0);
    std::vector<float> z(n * v), e(n * v);
    for (auto& x : z) x = static_cast<float>(rng.normal());
    for (auto& x : e) x = static_cast<float>(rng.normal());

    const double h = 1e-3;
    for (std::size_t row = 0; row < n; ++row)
        for (int j = 0; j < v; ++j) {
            double analytic = 2.0 * (e[row * v + j] - z[row * v + j]) / static_cast<double>(n);
            std::vector<float> ep = e, em = e;
            ep[row * v + j] += static_cast<float>(h);
            em[row * v + j] -= static_cast<float>(h);
            double numeric =
                (vq_losses(z, ep, n, v, 0.25).vq - vq_losses(z, em, n, v, 0.25).vq) / (2 * h);
            REQUIRE(analytic == Approx(numeric).margin(1e-4));
        }
}

TEST_CASE("training reduces the loss deterministically", "[autoencoder]") {
    auto make_shapes = [] {
        GridSpec spec = GridSpec::centered(16, 0.2, 0.05);
        std::vector<TsdfGrid> shapes;
        shapes.push_back(sphere_tsdf(spec, 0.08));
        shapes.push_back(sphere_tsdf(spec, 0.06, {0.03, 0.0, -0.02}));
        return shapes;
    };

    AeTrainConfig tc;
    tc.steps = 40;
    tc.batch_shapes = 2;
    tc.samples_per_shape = 256;
    tc.lr = 2e-3;
    tc.seed = 9;

    auto run_once = [&] {
        VqVae model(tiny_config(17));
        AeTrainer trainer(model, tc);
        return trainer.run(make_shapes());
    };

    std::vector<AeTrainStats> log = run_once();
    REQUIRE(log.size() == 40);
    for (const auto& s : log) {
        REQUIRE(std::isfinite(s.total));
        REQUIRE(s.recon >= 0.0);
        REQUIRE(s.vq >= 0.0);
        REQUIRE(s.commit >= 0.0);
    }
    REQUIRE(log.back().total < log.front().total);

    // restart schedule fires at batch 25 and not before
    for (int i = 0; i < 24; ++i) REQUIRE(log[i].codes_restarted == 0);

    // bit-identical rerun
    std::vector<AeTrainStats> again = run_once();
    for (std::size_t i = 0; i < log.size(); ++i) {
        REQUIRE(log[i].recon == again[i].recon);
        REQUIRE(log[i].vq == again[i].vq);
        REQUIRE(log[i].commit == again[i].commit);
        REQUIRE(log[i].total == again[i].total);
        REQUIRE(log[i].codes_restarted == again[i].codes_restarted);
    }
}

TEST_CASE("zero beta removes the commitment term", "[autoencoder]") {
    VqVaeConfig cfg = tiny_config(19);
    cfg.beta = 0.0;
    VqVae model(cfg);
    AeTrainConfig tc;
    tc.steps = 5;
    tc.samples_per_shape = 128;
    AeTrainer trainer(model, tc);
    std::vector<TsdfGrid> shapes{sphere_tsdf(cfg.grid, 0.08)};
    for (const auto& s : trainer.run(shapes)) REQUIRE(s.commit == 0.0);
}

TEST_CASE("checkpoints restore the model exactly", "[autoencoder]") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "svho_ae_ckpt_test";
    fs::remove_all(dir);

    VqVae model(tiny_config(23));
    TsdfGrid shape = sphere_tsdf(model.cfg.grid, 0.085);
    LatentCube before = model.encode_to_codes(shape);
    TsdfGrid decoded_before = model.decode_codes(before);

    save_autoencoder(model, dir);
    VqVae restored = load_autoencoder(dir);

    REQUIRE(restored.cfg.latent_dim == model.cfg.latent_dim);
    REQUIRE(restored.cfg.codebook_size == model.cfg.codebook_size);
    REQUIRE(restored.cfg.grid == model.cfg.grid);

    LatentCube after = restored.encode_to_codes(shape);
    REQUIRE(after.indices == before.indices);
    REQUIRE(restored.decode_codes(after).values == decoded_before.values);

    fs::remove_all(dir);
}
