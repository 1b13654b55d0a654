#pragma once

// Truncated signed distance volumes on the canonical (hand-wrist) cube:
// grid/patch layout, lossless patch split/assemble, and the on-disk format
// (one-line JSON header + raw little-endian f32 block, z fastest).

#include <nlohmann/json.hpp>

#include "svho/core.hpp"

namespace svho {

struct PatchSpec {
    int patches_per_axis = 8;
    int patch_resolution = 16;

    int cells() const { return patches_per_axis * patches_per_axis * patches_per_axis; }

    void validate() const {
        if (patches_per_axis <= 0 || patch_resolution <= 0)
            throw std::runtime_error("patch spec fields must be positive");
    }
};

struct GridSpec {
    int resolution = 128;          // voxels per axis
    double half_extent = 0.2;      // meters; cube side = 2 * half_extent
    double truncation = 0.05;      // meters
    Vec3 origin{-0.2, -0.2, -0.2}; // canonical-frame corner of voxel (0,0,0)

    static GridSpec centered(int resolution, double half_extent, double truncation) {
        GridSpec s;
        s.resolution = resolution;
        s.half_extent = half_extent;
        s.truncation = truncation;
        s.origin = {-half_extent, -half_extent, -half_extent};
        return s;
    }

    double voxel_size() const { return 2.0 * half_extent / resolution; }

    Vec3 center() const { return origin + Vec3{half_extent, half_extent, half_extent}; }

    // Value sampled at origin + (index + 0.5) * voxel_size.
    Vec3 voxel_center(int ix, int iy, int iz) const {
        double vs = voxel_size();
        return origin + Vec3{(ix + 0.5) * vs, (iy + 0.5) * vs, (iz + 0.5) * vs};
    }

    void validate() const {
        if (resolution <= 0) throw std::runtime_error("resolution must be positive");
        if (half_extent <= 0.0) throw std::runtime_error("half_extent must be positive");
        if (truncation <= voxel_size())
            throw std::runtime_error("truncation must exceed one voxel size");
    }

    void validate_with(const PatchSpec& pspec) const {
        validate();
        pspec.validate();
        if (resolution % pspec.patches_per_axis != 0 ||
            resolution != pspec.patches_per_axis * pspec.patch_resolution)
            throw std::runtime_error(
                "resolution must equal patches_per_axis * patch_resolution");
    }

    bool operator==(const GridSpec& o) const {
        return resolution == o.resolution && half_extent == o.half_extent &&
               truncation == o.truncation && origin.x == o.origin.x && origin.y == o.origin.y &&
               origin.z == o.origin.z;
    }
};

// Dense cubic volume, |value| <= truncation, stored row major with z fastest:
// flat index = (ix * R + iy) * R + iz.
struct TsdfGrid {
    GridSpec spec;
    std::vector<float> values;
    bool outside_volume_warning = false;  // set when source geometry never enters the cube

    TsdfGrid() = default;
    explicit TsdfGrid(const GridSpec& s)
        : spec(s),
          values(static_cast<std::size_t>(s.resolution) * s.resolution * s.resolution,
                 static_cast<float>(s.truncation)) {}

    std::size_t index(int ix, int iy, int iz) const {
        int r = spec.resolution;
        return (static_cast<std::size_t>(ix) * r + iy) * r + iz;
    }
    float at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
    float& at(int ix, int iy, int iz) { return values[index(ix, iy, iz)]; }

    void clamp_values() {
        float t = static_cast<float>(spec.truncation);
        for (auto& v : values) v = std::clamp(v, -t, t);
    }

    void validate() const {
        std::size_t expected =
            static_cast<std::size_t>(spec.resolution) * spec.resolution * spec.resolution;
        if (values.size() != expected) throw std::runtime_error("grid value count mismatch");
        float t = static_cast<float>(spec.truncation) * (1.0f + 1e-6f);
        for (float v : values)
            if (!(std::abs(v) <= t)) throw std::runtime_error("grid value exceeds truncation");
    }
};

// One 16^3 (by default) sub-volume, same z-fastest layout as the parent grid.
struct Patch {
    int resolution = 0;
    std::vector<float> values;
};

// Patch (i,j,k) covers voxels [r*i, r*(i+1)) per axis; patches are emitted in
// row-major order over (i,j,k) with k fastest.
inline std::vector<Patch> split_into_patches(const TsdfGrid& grid, const PatchSpec& pspec) {
    grid.spec.validate_with(pspec);
    const int P = pspec.patches_per_axis;
    const int r = pspec.patch_resolution;
    std::vector<Patch> patches(static_cast<std::size_t>(P) * P * P);
    for (int pi = 0; pi < P; ++pi)
        for (int pj = 0; pj < P; ++pj)
            for (int pk = 0; pk < P; ++pk) {
                Patch& p = patches[(static_cast<std::size_t>(pi) * P + pj) * P + pk];
                p.resolution = r;
                p.values.resize(static_cast<std::size_t>(r) * r * r);
                for (int x = 0; x < r; ++x)
                    for (int y = 0; y < r; ++y)
                        for (int z = 0; z < r; ++z)
                            p.values[(static_cast<std::size_t>(x) * r + y) * r + z] =
                                grid.at(pi * r + x, pj * r + y, pk * r + z);
            }
    return patches;
}

inline TsdfGrid assemble_from_patches(const std::vector<Patch>& patches, const PatchSpec& pspec,
                                      const GridSpec& spec) {
    spec.validate_with(pspec);
    const int P = pspec.patches_per_axis;
    const int r = pspec.patch_resolution;
    if (patches.size() != static_cast<std::size_t>(P) * P * P)
        throw std::runtime_error("wrong patch count: expected " + std::to_string(P * P * P) +
                                 ", got " + std::to_string(patches.size()));
    TsdfGrid grid(spec);
    for (int pi = 0; pi < P; ++pi)
        for (int pj = 0; pj < P; ++pj)
            for (int pk = 0; pk < P; ++pk) {
                const Patch& p = patches[(static_cast<std::size_t>(pi) * P + pj) * P + pk];
                if (p.resolution != r) throw std::runtime_error("patch resolution mismatch");
                for (int x = 0; x < r; ++x)
                    for (int y = 0; y < r; ++y)
                        for (int z = 0; z < r; ++z)
                            grid.at(pi * r + x, pj * r + y, pk * r + z) =
                                p.values[(static_cast<std::size_t>(x) * r + y) * r + z];
            }
    return grid;
}

inline void write_tsdf(const TsdfGrid& grid, const std::string& path) {
    nlohmann::json header = {
        {"resolution", grid.spec.resolution},
        {"half_extent", grid.spec.half_extent},
        {"truncation", grid.spec.truncation},
        {"origin", {grid.spec.origin.x, grid.spec.origin.y, grid.spec.origin.z}},
        {"dtype", "f32"},
        {"order", "row-major z-fastest"},
    };
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write file: " + path);
    os << header.dump() << '\n';
    write_f32_le(os, grid.values.data(), grid.values.size());
}

inline TsdfGrid read_tsdf(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open file: " + path);
    std::string header_line;
    if (!std::getline(is, header_line)) throw std::runtime_error("missing TSDF header: " + path);
    nlohmann::json h = nlohmann::json::parse(header_line);
    if (h.at("dtype") != "f32" || h.at("order") != "row-major z-fastest")
        throw std::runtime_error("unsupported TSDF encoding in " + path);
    GridSpec spec;
    spec.resolution = h.at("resolution").get<int>();
    spec.half_extent = h.at("half_extent").get<double>();
    spec.truncation = h.at("truncation").get<double>();
    auto o = h.at("origin");
    spec.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
    TsdfGrid grid(spec);
    read_f32_le(is, grid.values.data(), grid.values.size());
    grid.validate();
    return grid;
}

// Trilinear interpolation of the voxel-center lattice at a continuous point.
// Coordinates outside the grid clamp to the border values.
inline double grid_trilinear_sample(const TsdfGrid& grid, const Vec3& p) {
    const GridSpec& spec = grid.spec;
    const int R = spec.resolution;
    double vs = spec.voxel_size();
    double fx = (p.x - spec.origin.x) / vs - 0.5;
    double fy = (p.y - spec.origin.y) / vs - 0.5;
    double fz = (p.z - spec.origin.z) / vs - 0.5;
    int x0 = static_cast<int>(std::floor(fx));
    int y0 = static_cast<int>(std::floor(fy));
    int z0 = static_cast<int>(std::floor(fz));
    double wx = fx - x0, wy = fy - y0, wz = fz - z0;
    auto ci = [R](int v) { return std::clamp(v, 0, R - 1); };
    double acc = 0.0;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                double w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) * (dz ? wz : 1 - wz);
                acc += w * grid.values[grid.index(ci(x0 + dx), ci(y0 + dy), ci(z0 + dz))];
            }
    return acc;
}

// Analytic TSDF of a sphere; the reference construction used by geometry tests.
inline TsdfGrid make_sphere_tsdf(const GridSpec& spec, const Vec3& center, double radius) {
    TsdfGrid grid(spec);
    float t = static_cast<float>(spec.truncation);
    const int R = spec.resolution;
    parallel_for(static_cast<std::size_t>(R) * R, [&](std::size_t xy) {
        int ix = static_cast<int>(xy) / R;
        int iy = static_cast<int>(xy) % R;
        for (int iz = 0; iz < R; ++iz) {
            double d = (spec.voxel_center(ix, iy, iz) - center).norm() - radius;
            grid.at(ix, iy, iz) = std::clamp(static_cast<float>(d), -t, t);
        }
    });
    return grid;
}

}  // namespace svho
