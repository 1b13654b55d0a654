#pragma once

// Vector-quantization codebook: nearest-entry assignment, usage tracking and
// the periodic dead-code restart with a doubling interval.

#include "svho/core.hpp"

namespace svho {

// Grid of discrete code indices, one per latent cell (cells_per_axis^3,
// z-fastest). Values must stay below the codebook size.
struct LatentCube {
    int cells_per_axis = 8;
    int codebook_size = 512;
    std::vector<std::uint16_t> indices;

    LatentCube() = default;
    LatentCube(int s, int k)
        : cells_per_axis(s), codebook_size(k),
          indices(static_cast<std::size_t>(s) * s * s, 0) {}

    std::size_t cell_count() const {
        return static_cast<std::size_t>(cells_per_axis) * cells_per_axis * cells_per_axis;
    }

    std::uint16_t at(int i, int j, int k) const {
        return indices[(static_cast<std::size_t>(i) * cells_per_axis + j) * cells_per_axis + k];
    }

    void validate() const {
        if (cells_per_axis <= 0) throw std::runtime_error("cells_per_axis must be positive");
        if (indices.size() != cell_count())
            throw std::runtime_error("latent cube has wrong cell count");
        for (std::uint16_t v : indices)
            if (v >= codebook_size) throw std::runtime_error("code index out of range");
    }
};

class Codebook {
public:
    Codebook() = default;
    Codebook(int k, int v, std::uint64_t seed, long restart_interval = 25)
        : k_(k), v_(v), restart_interval_(restart_interval) {
        if (k <= 0 || v <= 0) throw std::runtime_error("codebook dims must be positive");
        if (restart_interval <= 0) throw std::runtime_error("restart interval must be positive");
        entries_.resize(static_cast<std::size_t>(k) * v);
        Rng rng(seed, 0xc0deb00c);
        // Small uniform init; entries migrate to the encoder's output range
        // via training and restarts.
        for (auto& e : entries_) e = static_cast<float>(rng.uniform(-0.1, 0.1));
        usage_.assign(static_cast<std::size_t>(k), 0);
    }

    int size() const { return k_; }
    int dim() const { return v_; }
    long restart_interval() const { return restart_interval_; }
    long batches_since_restart() const { return batches_since_restart_; }
    const std::vector<float>& raw_entries() const { return entries_; }
    std::vector<float>& raw_entries() { return entries_; }
    const std::vector<long>& usage_counts() const { return usage_; }

    const float* entry(int index) const {
        if (index < 0 || index >= k_) throw std::runtime_error("code index out of range");
        return &entries_[static_cast<std::size_t>(index) * v_];
    }

    // Nearest entry by squared L2; ties resolve to the smallest index.
    // Records the assignment in the usage counters.
    int quantize(const float* z, float* e_out = nullptr) {
        int best = nearest(z);
        ++usage_[best];
        if (e_out) std::copy_n(entry(best), v_, e_out);
        return best;
    }

    int nearest(const float* z) const {
        int best = 0;
        double best_d = distance2(z, 0);
        for (int k = 1; k < k_; ++k) {
            double d = distance2(z, k);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        return best;
    }

    double distance2(const float* z, int index) const {
        const float* e = &entries_[static_cast<std::size_t>(index) * v_];
        double acc = 0.0;
        for (int i = 0; i < v_; ++i) {
            double d = static_cast<double>(z[i]) - e[i];
            acc += d * d;
        }
        return acc;
    }

    // Quantizes a [V, S^3] channel-major latent cube. Returns the index cube;
    // if quantized_out is given it is filled with the selected entries in the
    // same layout.
    LatentCube quantize_cube(const std::vector<float>& cube, int cells_per_axis,
                             std::vector<float>* quantized_out = nullptr) {
        std::size_t cells =
            static_cast<std::size_t>(cells_per_axis) * cells_per_axis * cells_per_axis;
        if (cube.size() != cells * static_cast<std::size_t>(v_))
            throw std::runtime_error("latent cube has wrong element count");
        LatentCube out(cells_per_axis, k_);
        if (quantized_out) quantized_out->assign(cube.size(), 0.0f);
        std::vector<float> z(v_);
        for (std::size_t c = 0; c < cells; ++c) {
            for (int i = 0; i < v_; ++i) z[i] = cube[static_cast<std::size_t>(i) * cells + c];
            int idx = quantize(z.data());
            out.indices[c] = static_cast<std::uint16_t>(idx);
            if (quantized_out) {
                const float* e = entry(idx);
                for (int i = 0; i < v_; ++i)
                    (*quantized_out)[static_cast<std::size_t>(i) * cells + c] = e[i];
            }
        }
        return out;
    }

    // Entry gather: index cube -> [V, S^3] cube of codebook vectors.
    std::vector<float> lookup_cube(const LatentCube& latent) const {
        if (latent.codebook_size != k_)
            throw std::runtime_error("latent cube was built for a different codebook size");
        std::size_t cells = latent.cell_count();
        std::vector<float> cube(static_cast<std::size_t>(v_) * cells);
        for (std::size_t c = 0; c < cells; ++c) {
            const float* e = entry(latent.indices[c]);
            for (int i = 0; i < v_; ++i) cube[static_cast<std::size_t>(i) * cells + c] = e[i];
        }
        return cube;
    }

    // Called once per training batch after usage bookkeeping. When the batch
    // counter reaches the current interval, entries unused since the previous
    // restart are re-seeded from the replacement pool (rows of recent encoder
    // outputs, [n, V]) and the interval doubles.
    //
    // Returns the number of entries replaced (0 on non-boundary batches). The
    // optional out-list receives the replaced indices so optimizer state can
    // be reset for them.
    int restart_unused(const std::vector<float>& replacement_pool, std::size_t pool_rows,
                       std::uint64_t seed, std::vector<int>* replaced_out = nullptr) {
        ++batches_since_restart_;
        if (batches_since_restart_ < restart_interval_) return 0;

        bool any_unused = std::any_of(usage_.begin(), usage_.end(), [](long u) { return u == 0; });
        if (any_unused && pool_rows == 0)
            throw std::runtime_error("codebook restart needs a non-empty replacement pool");

        int replaced = 0;
        Rng rng(seed, 0x5e51a7);
        for (int k = 0; k < k_; ++k) {
            if (usage_[k] != 0) continue;
            std::size_t row = rng.uniform_u32(static_cast<std::uint32_t>(pool_rows));
            std::copy_n(&replacement_pool[row * v_], v_,
                        &entries_[static_cast<std::size_t>(k) * v_]);
            if (replaced_out) replaced_out->push_back(k);
            ++replaced;
        }
        std::fill(usage_.begin(), usage_.end(), 0L);
        batches_since_restart_ = 0;
        restart_interval_ *= 2;
        return replaced;
    }

    // Serialized as one f32 blob (entries) plus counters kept in the manifest.
    void set_state(long restart_interval, long batches_since_restart) {
        if (restart_interval <= 0) throw std::runtime_error("restart interval must be positive");
        restart_interval_ = restart_interval;
        batches_since_restart_ = batches_since_restart;
    }

private:
    int k_ = 0;
    int v_ = 0;
    std::vector<float> entries_;
    std::vector<long> usage_;
    long restart_interval_ = 25;
    long batches_since_restart_ = 0;
};

// VQ regularizer values for a batch of (z_e, e) pairs stored as [n, V] rows:
// vq term |sg(z_e) - e|^2 and commitment term beta * |z_e - sg(e)|^2, both
// averaged over rows. Gradients are handled at the training site (the vq term
// moves entries toward encoder outputs, the commitment term pulls encoder
// outputs toward their entries).
struct VqLossValues {
    double vq = 0.0;
    double commit = 0.0;
};

inline VqLossValues vq_losses(const std::vector<float>& z_rows, const std::vector<float>& e_rows,
                              std::size_t n, int v, double beta) {
    if (z_rows.size() != n * static_cast<std::size_t>(v) || e_rows.size() != z_rows.size())
        throw std::runtime_error("vq loss rows have mismatched sizes");
    double acc = 0.0;
    for (std::size_t i = 0; i < z_rows.size(); ++i) {
        double d = static_cast<double>(z_rows[i]) - e_rows[i];
        acc += d * d;
    }
    double mean = n > 0 ? acc / static_cast<double>(n) : 0.0;
    return {mean, beta * mean};
}

}  // namespace svho
