#pragma once

// Patchwise VQ-VAE over TSDF volumes. A shared convolutional encoder maps
// each patch to a latent vector, a small residual 3D-conv mixer exchanges
// information between neighbouring patches, the latent cube is vector-
// quantized against the codebook, and a coordinate MLP decodes signed
// distances at arbitrary query points from the trilinearly interpolated
// latent field.

#include "svho/checkpoint.hpp"
#include "svho/codebook.hpp"
#include "svho/grid.hpp"
#include "svho/nn.hpp"

namespace svho {

struct VqVaeConfig {
    GridSpec grid;
    PatchSpec patches;
    int latent_dim = 128;
    int codebook_size = 512;
    std::vector<int> encoder_widths;  // one per stride-2 stage; empty -> derived
    int decoder_hidden = 512;
    double beta = 0.25;
    std::uint64_t seed = 1;

    static std::vector<int> derive_encoder_widths(int patch_resolution, int latent_dim) {
        int stages = 0;
        for (int r = patch_resolution; r > 1; r /= 2) ++stages;
        std::vector<int> widths;
        for (int i = 0; i + 1 < stages; ++i) widths.push_back(32 << i);
        widths.push_back(latent_dim);
        return widths;
    }

    void validate() const {
        grid.validate();
        patches.validate();
        grid.validate_with(patches);
        if (latent_dim <= 0 || codebook_size <= 0)
            throw std::runtime_error("latent_dim and codebook_size must be positive");
        if (codebook_size > 65536)
            throw std::runtime_error("codebook_size exceeds the u16 index range");
        int r = patch_resolution_checked();
        std::vector<int> widths = encoder_widths.empty()
                                      ? derive_encoder_widths(r, latent_dim)
                                      : encoder_widths;
        int stages = 0;
        for (int v = r; v > 1; v /= 2) ++stages;
        if (static_cast<int>(widths.size()) != stages)
            throw std::runtime_error("encoder width list does not match stage count");
        if (widths.back() != latent_dim)
            throw std::runtime_error("last encoder width must equal latent_dim");
        if (decoder_hidden <= 0) throw std::runtime_error("decoder_hidden must be positive");
        if (beta < 0.0) throw std::runtime_error("beta must be non-negative");
    }

    int patch_resolution_checked() const {
        int r = patches.patch_resolution;
        int v = r;
        while (v > 1) {
            if (v % 2 != 0) throw std::runtime_error("patch resolution must be a power of two");
            v /= 2;
        }
        return r;
    }

    std::vector<int> effective_encoder_widths() const {
        return encoder_widths.empty() ? derive_encoder_widths(patches.patch_resolution, latent_dim)
                                      : encoder_widths;
    }
};

inline json vqvae_config_to_json(const VqVaeConfig& cfg) {
    return {{"grid",
             {{"resolution", cfg.grid.resolution},
              {"half_extent", cfg.grid.half_extent},
              {"truncation", cfg.grid.truncation},
              {"origin", {cfg.grid.origin.x, cfg.grid.origin.y, cfg.grid.origin.z}}}},
            {"patches",
             {{"patches_per_axis", cfg.patches.patches_per_axis},
              {"patch_resolution", cfg.patches.patch_resolution}}},
            {"latent_dim", cfg.latent_dim},
            {"codebook_size", cfg.codebook_size},
            {"encoder_widths", cfg.effective_encoder_widths()},
            {"decoder_hidden", cfg.decoder_hidden},
            {"beta", cfg.beta},
            {"seed", cfg.seed}};
}

inline VqVaeConfig vqvae_config_from_json(const json& j) {
    VqVaeConfig cfg;
    const json& g = j.at("grid");
    cfg.grid.resolution = g.at("resolution").get<int>();
    cfg.grid.half_extent = g.at("half_extent").get<double>();
    cfg.grid.truncation = g.at("truncation").get<double>();
    auto o = g.at("origin");
    cfg.grid.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
    const json& p = j.at("patches");
    cfg.patches.patches_per_axis = p.at("patches_per_axis").get<int>();
    cfg.patches.patch_resolution = p.at("patch_resolution").get<int>();
    cfg.latent_dim = j.at("latent_dim").get<int>();
    cfg.codebook_size = j.at("codebook_size").get<int>();
    cfg.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
    cfg.decoder_hidden = j.at("decoder_hidden").get<int>();
    cfg.beta = j.at("beta").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

class VqVae {
public:
    VqVaeConfig cfg;
    std::vector<nn::Conv3d> encoder;  // stride-2 stages, relu between (not after last)
    nn::Conv3d mixer1, mixer2;        // residual mixer, second conv zero-initialized
    std::vector<nn::Linear> decoder;  // 5 layers, relu between
    Codebook book;

    explicit VqVae(VqVaeConfig c) : cfg(std::move(c)) {
        cfg.validate();
        Rng rng(cfg.seed, 0x3ea7);
        std::vector<int> widths = cfg.effective_encoder_widths();
        int in_c = 1;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            encoder.emplace_back("encoder.stage" + std::to_string(i), in_c, widths[i], 3, 2, 1,
                                 rng);
            in_c = widths[i];
        }
        // Replicate padding keeps a constant latent field constant through the
        // mixer, which pins down a unique empty-space code after training.
        int v = cfg.latent_dim;
        mixer1 = nn::Conv3d("mixer.conv0", v, v, 3, 1, 1, rng, false, /*replicate=*/true);
        mixer2 = nn::Conv3d("mixer.conv1", v, v, 3, 1, 1, rng, /*zero_init=*/true,
                            /*replicate=*/true);
        int h = cfg.decoder_hidden;
        decoder.emplace_back("decoder.fc0", v + 3, h, rng);
        for (int i = 1; i < 4; ++i)
            decoder.emplace_back("decoder.fc" + std::to_string(i), h, h, rng);
        decoder.emplace_back("decoder.fc4", h, 1, rng);
        book = Codebook(cfg.codebook_size, cfg.latent_dim, cfg.seed, 25);
    }

    std::vector<nn::Param*> params() {
        std::vector<nn::Param*> out;
        for (auto& c : encoder) c.collect(out);
        mixer1.collect(out);
        mixer2.collect(out);
        for (auto& l : decoder) l.collect(out);
        return out;
    }

    int cells_per_axis() const { return cfg.patches.patches_per_axis; }
    std::size_t cell_count() const { return static_cast<std::size_t>(cfg.patches.cells()); }

    // --- encoder ----------------------------------------------------------

    // One patch (z-fastest, raw meters) -> latent vector of size V.
    std::vector<float> encode_patch(const std::vector<float>& patch) const {
        std::vector<float> x = normalize_patch(patch);
        int size = cfg.patches.patch_resolution;
        for (std::size_t s = 0; s < encoder.size(); ++s) {
            x = encoder[s].forward(x, size, size, size);
            size = encoder[s].out_size(size);
            if (s + 1 < encoder.size()) nn::relu_inplace(x);
        }
        return x;  // spatial size 1 -> V values
    }

    // Full grid -> mixed latent cube [V, P^3] (channel-major, z-fastest cells).
    std::vector<float> encode_grid_latent(const TsdfGrid& grid) const {
        std::vector<Patch> patches = split_into_patches(grid, cfg.patches);
        std::size_t cells = cell_count();
        int v = cfg.latent_dim;
        std::vector<float> cube(static_cast<std::size_t>(v) * cells);
        for (std::size_t c = 0; c < cells; ++c) {
            std::vector<float> z = encode_patch(patches[c].values);
            for (int i = 0; i < v; ++i) cube[static_cast<std::size_t>(i) * cells + c] = z[i];
        }
        return mixer_forward(cube);
    }

    // Residual mixer: y = x + conv1(relu(conv0(x))).
    std::vector<float> mixer_forward(const std::vector<float>& cube) const {
        int p = cells_per_axis();
        std::vector<float> h = mixer1.forward(cube, p, p, p);
        nn::relu_inplace(h);
        std::vector<float> d = mixer2.forward(h, p, p, p);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += cube[i];
        return d;
    }

    // Encode + quantize; records codebook usage.
    LatentCube encode_to_codes(const TsdfGrid& grid) {
        std::vector<float> mixed = encode_grid_latent(grid);
        return book.quantize_cube(mixed, cells_per_axis());
    }

    // --- decoder ----------------------------------------------------------

    // MLP forward over n rows of [V+3] inputs; returns n scalars (normalized
    // signed distance, truncation units).
    std::vector<float> mlp_forward(const std::vector<float>& rows, int n) const {
        std::vector<float> x = decoder[0].forward(rows, n);
        for (std::size_t l = 1; l < decoder.size(); ++l) {
            nn::relu_inplace(x);
            x = decoder[l].forward(x, n);
        }
        return x;
    }

    // Canonical-space point -> cell coordinates of the latent cube.
    Vec3 point_to_cell(const Vec3& p) const {
        double cell = 2.0 * cfg.grid.half_extent / cells_per_axis();
        return {(p.x - cfg.grid.origin.x) / cell, (p.y - cfg.grid.origin.y) / cell,
                (p.z - cfg.grid.origin.z) / cell};
    }

    Vec3 point_normalized(const Vec3& p) const {
        Vec3 c = cfg.grid.center();
        double h = cfg.grid.half_extent;
        return {(p.x - c.x) / h, (p.y - c.y) / h, (p.z - c.z) / h};
    }

    // Decoder input rows for a set of canonical points against a latent cube.
    std::vector<float> build_decoder_inputs(const std::vector<float>& cube,
                                            const std::vector<Vec3>& points,
                                            std::vector<nn::TrilinearGather::Tap>* taps
                                            = nullptr) const {
        int n = static_cast<int>(points.size());
        int v = cfg.latent_dim;
        std::vector<double> cell_coords(static_cast<std::size_t>(n) * 3);
        for (int i = 0; i < n; ++i) {
            Vec3 cc = point_to_cell(points[i]);
            cell_coords[i * 3 + 0] = cc.x;
            cell_coords[i * 3 + 1] = cc.y;
            cell_coords[i * 3 + 2] = cc.z;
        }
        std::vector<float> z =
            nn::TrilinearGather::forward(cube, v, cells_per_axis(), cell_coords, n, taps);
        std::vector<float> rows(static_cast<std::size_t>(n) * (v + 3));
        for (int i = 0; i < n; ++i) {
            std::copy_n(&z[static_cast<std::size_t>(i) * v], v,
                        &rows[static_cast<std::size_t>(i) * (v + 3)]);
            Vec3 ph = point_normalized(points[i]);
            rows[static_cast<std::size_t>(i) * (v + 3) + v + 0] = static_cast<float>(ph.x);
            rows[static_cast<std::size_t>(i) * (v + 3) + v + 1] = static_cast<float>(ph.y);
            rows[static_cast<std::size_t>(i) * (v + 3) + v + 2] = static_cast<float>(ph.z);
        }
        return rows;
    }

    // Signed distance (meters) at a single canonical point given a latent cube.
    double decode_sdf(const std::vector<float>& cube, const Vec3& p) const {
        std::vector<float> rows = build_decoder_inputs(cube, {p});
        std::vector<float> out = mlp_forward(rows, 1);
        return static_cast<double>(out[0]) * cfg.grid.truncation;
    }

    // Full-grid decode of a latent cube, chunked through the MLP. Values are
    // clamped to the truncation band like any stored TSDF.
    TsdfGrid decode_latent_cube(const std::vector<float>& cube) const {
        TsdfGrid out(cfg.grid);
        const int R = cfg.grid.resolution;
        float t = static_cast<float>(cfg.grid.truncation);
        const std::size_t total = out.values.size();
        const std::size_t chunk = 4096;
        std::vector<Vec3> pts;
        pts.reserve(chunk);
        for (std::size_t start = 0; start < total; start += chunk) {
            std::size_t end = std::min(start + chunk, total);
            pts.clear();
            for (std::size_t lin = start; lin < end; ++lin) {
                int iz = static_cast<int>(lin % R);
                int iy = static_cast<int>((lin / R) % R);
                int ix = static_cast<int>(lin / (static_cast<std::size_t>(R) * R));
                pts.push_back(cfg.grid.voxel_center(ix, iy, iz));
            }
            std::vector<float> rows = build_decoder_inputs(cube, pts);
            std::vector<float> vals = mlp_forward(rows, static_cast<int>(pts.size()));
            for (std::size_t i = 0; i < pts.size(); ++i)
                out.values[start + i] = std::clamp(vals[i] * t, -t, t);
        }
        return out;
    }

    TsdfGrid decode_codes(const LatentCube& latent) const {
        return decode_latent_cube(book.lookup_cube(latent));
    }

    std::vector<float> normalize_patch(const std::vector<float>& patch) const {
        std::vector<float> x(patch.size());
        float inv_t = static_cast<float>(1.0 / cfg.grid.truncation);
        for (std::size_t i = 0; i < patch.size(); ++i) x[i] = patch[i] * inv_t;
        return x;
    }
};

// ---------------------------------------------------------------------------
// Training.

struct AeTrainConfig {
    int steps = 2000;
    int batch_shapes = 4;
    int samples_per_shape = 1024;
    double lr = 1e-3;
    long restart_interval = 25;
    std::uint64_t seed = 7;
    // Early exit once the smoothed total loss falls below this fraction of
    // the initial loss; 0 disables.
    double early_stop_ratio = 0.0;

    void validate() const {
        if (steps <= 0 || batch_shapes <= 0 || samples_per_shape <= 0)
            throw std::runtime_error("training sizes must be positive");
        if (lr <= 0.0) throw std::runtime_error("learning rate must be positive");
        if (restart_interval <= 0) throw std::runtime_error("restart interval must be positive");
    }
};

struct AeTrainStats {
    int step = 0;
    double recon = 0.0;
    double vq = 0.0;
    double commit = 0.0;
    double total = 0.0;
    int codes_restarted = 0;
};

// One shape's sampled training points: canonical positions plus normalized
// signed-distance targets.
struct AePointBatch {
    std::vector<Vec3> points;
    std::vector<float> targets;  // s / truncation
};

inline AePointBatch sample_training_points(const TsdfGrid& grid,
                                           const std::vector<std::size_t>& near_surface_voxels,
                                           int n, Rng& rng) {
    const GridSpec& spec = grid.spec;
    const int R = spec.resolution;
    double vs = spec.voxel_size();
    AePointBatch out;
    out.points.reserve(n);
    out.targets.reserve(n);
    int n_near = near_surface_voxels.empty() ? 0 : n / 2;
    for (int i = 0; i < n; ++i) {
        Vec3 p;
        if (i < n_near) {
            std::size_t lin = near_surface_voxels[rng.uniform_u32(
                static_cast<std::uint32_t>(near_surface_voxels.size()))];
            int iz = static_cast<int>(lin % R);
            int iy = static_cast<int>((lin / R) % R);
            int ix = static_cast<int>(lin / (static_cast<std::size_t>(R) * R));
            Vec3 c = spec.voxel_center(ix, iy, iz);
            p = {c.x + rng.uniform(-0.5, 0.5) * vs, c.y + rng.uniform(-0.5, 0.5) * vs,
                 c.z + rng.uniform(-0.5, 0.5) * vs};
        } else {
            p = {rng.uniform(spec.origin.x, spec.origin.x + 2 * spec.half_extent),
                 rng.uniform(spec.origin.y, spec.origin.y + 2 * spec.half_extent),
                 rng.uniform(spec.origin.z, spec.origin.z + 2 * spec.half_extent)};
        }
        double s = grid_trilinear_sample(grid, p);
        out.points.push_back(p);
        out.targets.push_back(static_cast<float>(s / spec.truncation));
    }
    return out;
}

inline std::vector<std::size_t> find_near_surface_voxels(const TsdfGrid& grid,
                                                         double band_voxels = 2.0) {
    double band = band_voxels * grid.spec.voxel_size();
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < grid.values.size(); ++i)
        if (std::abs(grid.values[i]) < band) out.push_back(i);
    return out;
}

class AeTrainer {
public:
    AeTrainer(VqVae& model, AeTrainConfig cfg) : model_(model), cfg_(cfg) {
        cfg_.validate();
        model_.book.set_state(cfg_.restart_interval, 0);
        entries_param_ = nn::Param("codebook.entries",
                                   {model_.book.size(), model_.book.dim()});
        entries_param_.value = model_.book.raw_entries();
        params_ = model_.params();
        params_.push_back(&entries_param_);
        adam_.lr = cfg_.lr;
    }

    std::vector<nn::Param*>& params() { return params_; }

    void zero_grads() {
        for (nn::Param* p : params_) p->zero_grad();
    }

    // Forward + backward for one shape. Gradients are scaled by grad_scale
    // and accumulated into the parameter set. When frozen_offset is non-null
    // the decoder sees mixed + offset instead of the quantized entries (the
    // straight-through path with a fixed residual; used by gradient checks)
    // and the vq/commitment terms are skipped.
    struct PassResult {
        double recon = 0.0, vq = 0.0, commit = 0.0;
        std::vector<float> mixed;  // pre-quantization latent cube
    };

    PassResult forward_backward(const TsdfGrid& shape, const AePointBatch& pts,
                                double grad_scale,
                                const std::vector<float>* frozen_offset = nullptr) {
        VqVae& m = model_;
        const int p_axis = m.cells_per_axis();
        const int v = m.cfg.latent_dim;
        const std::size_t cells = m.cell_count();
        const int n_pts = static_cast<int>(pts.points.size());
        const int r = m.cfg.patches.patch_resolution;

        // Encoder forward with caches.
        std::vector<Patch> patches = split_into_patches(shape, m.cfg.patches);
        std::size_t n_stages = m.encoder.size();
        std::vector<std::vector<std::vector<float>>> cols(cells), acts(cells);
        std::vector<float> enc_cube(static_cast<std::size_t>(v) * cells);
        for (std::size_t c = 0; c < cells; ++c) {
            std::vector<float> x = m.normalize_patch(patches[c].values);
            cols[c].resize(n_stages);
            acts[c].resize(n_stages);
            int size = r;
            for (std::size_t s = 0; s < n_stages; ++s) {
                x = m.encoder[s].forward(x, size, size, size, &cols[c][s]);
                size = m.encoder[s].out_size(size);
                if (s + 1 < n_stages) nn::relu_inplace(x);
                acts[c][s] = x;
            }
            for (int i = 0; i < v; ++i) enc_cube[static_cast<std::size_t>(i) * cells + c] = x[i];
        }

        // Mixer forward with caches.
        std::vector<float> mix_cols0, mix_cols1;
        std::vector<float> h = m.mixer1.forward(enc_cube, p_axis, p_axis, p_axis, &mix_cols0);
        nn::relu_inplace(h);
        std::vector<float> mix_cols_in = h;
        std::vector<float> res = m.mixer2.forward(h, p_axis, p_axis, p_axis, &mix_cols1);
        std::vector<float> mixed(res.size());
        for (std::size_t i = 0; i < res.size(); ++i) mixed[i] = res[i] + enc_cube[i];

        // Quantize (or apply the frozen offset).
        PassResult result;
        std::vector<float> dec_cube;
        std::vector<float> e_cube;
        if (frozen_offset) {
            dec_cube.resize(mixed.size());
            for (std::size_t i = 0; i < mixed.size(); ++i)
                dec_cube[i] = mixed[i] + (*frozen_offset)[i];
        } else {
            m.book.quantize_cube(mixed, p_axis, &e_cube);
            dec_cube = e_cube;
            double acc = 0.0;
            for (std::size_t i = 0; i < mixed.size(); ++i) {
                double d = static_cast<double>(mixed[i]) - e_cube[i];
                acc += d * d;
            }
            result.vq = acc / static_cast<double>(cells);
            result.commit = m.cfg.beta * result.vq;
        }

        // Decoder forward with caches.
        std::vector<nn::TrilinearGather::Tap> taps;
        std::vector<float> rows = m.build_decoder_inputs(dec_cube, pts.points, &taps);
        std::size_t n_layers = m.decoder.size();
        std::vector<std::vector<float>> layer_in(n_layers);
        std::vector<float> x = rows;
        for (std::size_t l = 0; l < n_layers; ++l) {
            layer_in[l] = x;
            x = m.decoder[l].forward(x, n_pts);
            if (l + 1 < n_layers) nn::relu_inplace(x);
        }

        // Reconstruction loss: mean absolute error on normalized values.
        double recon = 0.0;
        std::vector<float> dout(x.size());
        float pt_scale = static_cast<float>(grad_scale / n_pts);
        for (int i = 0; i < n_pts; ++i) {
            float diff = x[i] - pts.targets[i];
            recon += std::abs(diff);
            dout[i] = diff > 0 ? pt_scale : (diff < 0 ? -pt_scale : 0.0f);
        }
        result.recon = recon / n_pts;

        // Decoder backward.
        std::vector<float> grad = dout;
        for (std::size_t l = n_layers; l-- > 0;) {
            if (l + 1 < n_layers) {
                // relu sat between this layer's output and the next input
                grad = nn::relu_backward(layer_in[l + 1], grad);
            }
            grad = m.decoder[l].backward(layer_in[l], grad, n_pts);
        }

        // Split off d(latent) rows and scatter back through the gather.
        std::vector<float> dz(static_cast<std::size_t>(n_pts) * v);
        for (int i = 0; i < n_pts; ++i)
            std::copy_n(&grad[static_cast<std::size_t>(i) * (v + 3)], v,
                        &dz[static_cast<std::size_t>(i) * v]);
        std::vector<float> d_dec(dec_cube.size(), 0.0f);
        nn::TrilinearGather::backward_into(taps, dz, v, p_axis, d_dec);

        // Straight-through: the decoder-side gradient passes to the mixed
        // latents unchanged. The commitment term pulls mixed toward its
        // entries; the vq term moves the entries toward the latents.
        std::vector<float> d_mixed = d_dec;
        if (!frozen_offset) {
            double cell_scale = grad_scale / static_cast<double>(cells);
            for (std::size_t i = 0; i < mixed.size(); ++i) {
                double resid = static_cast<double>(mixed[i]) - e_cube[i];
                d_mixed[i] += static_cast<float>(2.0 * m.cfg.beta * resid * cell_scale);
            }
        }

        // Mixer backward (residual).
        std::vector<float> d_res = m.mixer2.backward(mix_cols1, d_mixed, p_axis, p_axis, p_axis);
        d_res = nn::relu_backward(mix_cols_in, d_res);
        std::vector<float> d_enc = m.mixer1.backward(mix_cols0, d_res, p_axis, p_axis, p_axis);
        for (std::size_t i = 0; i < d_enc.size(); ++i) d_enc[i] += d_mixed[i];

        // Encoder backward per patch.
        for (std::size_t c = 0; c < cells; ++c) {
            std::vector<float> g(v);
            for (int i = 0; i < v; ++i) g[i] = d_enc[static_cast<std::size_t>(i) * cells + c];
            int size = r;
            std::vector<int> sizes(n_stages);
            for (std::size_t s = 0; s < n_stages; ++s) {
                sizes[s] = size;
                size = m.encoder[s].out_size(size);
            }
            for (std::size_t s = n_stages; s-- > 0;) {
                if (s + 1 < n_stages) g = nn::relu_backward(acts[c][s], g);
                g = m.encoder[s].backward(cols[c][s], g, sizes[s], sizes[s], sizes[s]);
            }
        }

        result.mixed = std::move(mixed);
        return result;
    }

    std::vector<AeTrainStats> run(const std::vector<TsdfGrid>& shapes) {
        if (shapes.empty()) throw std::runtime_error("no training shapes");
        std::vector<std::vector<std::size_t>> near_surface;
        near_surface.reserve(shapes.size());
        for (const auto& s : shapes) near_surface.push_back(find_near_surface_voxels(s));

        std::vector<AeTrainStats> log;
        double initial_total = -1.0;
        const std::size_t cells = model_.cell_count();
        const int v = model_.cfg.latent_dim;

        for (int step = 0; step < cfg_.steps; ++step) {
            Rng step_rng(cfg_.seed, 0xae000000u + static_cast<std::uint64_t>(step));
            std::vector<int> batch;
            if (static_cast<std::size_t>(cfg_.batch_shapes) >= shapes.size()) {
                batch.resize(shapes.size());
                for (std::size_t i = 0; i < shapes.size(); ++i) batch[i] = static_cast<int>(i);
            } else {
                batch = step_rng.sample_without_replacement(static_cast<int>(shapes.size()),
                                                            cfg_.batch_shapes);
            }

            zero_grads();
            // Codebook values feeding this step's quantization come from the
            // optimizer state.
            model_.book.raw_entries() = entries_param_.value;

            double recon = 0.0, vq = 0.0, commit = 0.0;
            double grad_scale = 1.0 / static_cast<double>(batch.size());
            std::vector<float> pool;
            pool.reserve(batch.size() * cells * static_cast<std::size_t>(v));
            std::size_t pool_rows = 0;
            for (std::size_t bi = 0; bi < batch.size(); ++bi) {
                std::size_t si = static_cast<std::size_t>(batch[bi]);
                Rng pt_rng(cfg_.seed, fnv1a64("pts") ^ (static_cast<std::uint64_t>(step) << 20) ^
                                           si);
                AePointBatch pts = sample_training_points(shapes[si], near_surface[si],
                                                          cfg_.samples_per_shape, pt_rng);
                PassResult r = forward_backward(shapes[si], pts, grad_scale);
                recon += r.recon;
                vq += r.vq;
                commit += r.commit;
                accumulate_entry_grads(r.mixed, grad_scale);
                // Pool rows are the per-cell latent vectors of this batch.
                for (std::size_t c = 0; c < cells; ++c) {
                    for (int i = 0; i < v; ++i)
                        pool.push_back(r.mixed[static_cast<std::size_t>(i) * cells + c]);
                    ++pool_rows;
                }
            }
            recon /= static_cast<double>(batch.size());
            vq /= static_cast<double>(batch.size());
            commit /= static_cast<double>(batch.size());

            adam_.step(params_);
            model_.book.raw_entries() = entries_param_.value;

            std::vector<int> replaced;
            int n_replaced = model_.book.restart_unused(
                pool, pool_rows, fnv1a64("restart") ^ cfg_.seed ^ static_cast<std::uint64_t>(step),
                &replaced);
            if (n_replaced > 0) {
                entries_param_.value = model_.book.raw_entries();
                for (int k : replaced) {
                    std::fill_n(&entries_param_.adam_m[static_cast<std::size_t>(k) * v], v, 0.0f);
                    std::fill_n(&entries_param_.adam_v[static_cast<std::size_t>(k) * v], v, 0.0f);
                }
            }

            AeTrainStats st;
            st.step = step;
            st.recon = recon;
            st.vq = vq;
            st.commit = commit;
            st.total = recon + vq + commit;
            st.codes_restarted = n_replaced;
            log.push_back(st);
            if (initial_total < 0.0) initial_total = st.total;
            if (cfg_.early_stop_ratio > 0.0 && st.total < cfg_.early_stop_ratio * initial_total)
                break;
        }
        return log;
    }

private:
    // d(vq)/d(entry) = 2 (e - z) / cells for each assigned cell, using the
    // assignments the forward pass just made. Assignments are recomputed via
    // nearest lookup on the same entry values, so they match.
    void accumulate_entry_grads(const std::vector<float>& mixed, double grad_scale) {
        const std::size_t cells = model_.cell_count();
        const int v = model_.cfg.latent_dim;
        double cell_scale = grad_scale / static_cast<double>(cells);
        std::vector<float> z(v);
        for (std::size_t c = 0; c < cells; ++c) {
            for (int i = 0; i < v; ++i) z[i] = mixed[static_cast<std::size_t>(i) * cells + c];
            int k = model_.book.nearest(z.data());
            const float* e = model_.book.entry(k);
            float* g = &entries_param_.grad[static_cast<std::size_t>(k) * v];
            for (int i = 0; i < v; ++i)
                g[i] += static_cast<float>(2.0 * (static_cast<double>(e[i]) - z[i]) * cell_scale);
        }
    }

    VqVae& model_;
    AeTrainConfig cfg_;
    nn::Param entries_param_;
    std::vector<nn::Param*> params_;
    nn::Adam adam_;
};

inline std::vector<AeTrainStats> train_autoencoder(VqVae& model,
                                                   const std::vector<TsdfGrid>& shapes,
                                                   const AeTrainConfig& cfg) {
    AeTrainer trainer(model, cfg);
    return trainer.run(shapes);
}

// ---------------------------------------------------------------------------
// Checkpointing.

inline void save_autoencoder(VqVae& model, const fs::path& dir) {
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["kind"] = "autoencoder";
    manifest["config"] = vqvae_config_to_json(model.cfg);
    json params = json::array();
    std::vector<nn::Param*> ps = model.params();
    save_param_blobs(ps, dir / "params", params);
    manifest["params"] = params;
    save_codebook_blob(model.book, dir, manifest);
    write_manifest(dir, manifest);
}

inline VqVae load_autoencoder(const fs::path& dir) {
    json manifest = read_manifest(dir);
    if (manifest.at("kind").get<std::string>() != "autoencoder")
        throw std::runtime_error("checkpoint at " + dir.string() + " is not an autoencoder");
    VqVae model(vqvae_config_from_json(manifest.at("config")));
    std::vector<nn::Param*> ps = model.params();
    load_param_blobs(ps, dir / "params", manifest.at("params"));
    model.book = load_codebook_blob(dir, manifest);
    if (model.book.size() != model.cfg.codebook_size || model.book.dim() != model.cfg.latent_dim)
        throw std::runtime_error("codebook dimensions disagree with the model config");
    return model;
}

}  // namespace svho
