#pragma once

// Rigid camera<->canonical transforms, pinhole projection and pixel-aligned
// feature gathering at the latent-cell lattice.

#include <nlohmann/json.hpp>

#include "svho/core.hpp"
#include "svho/grid.hpp"

namespace svho {

// The global hand pose pi: maps camera-frame points into the hand-wrist
// (canonical) frame.
struct HandPose {
    Mat3 rotation;      // R
    Vec3 translation;   // t

    Vec3 apply(const Vec3& p_cam) const { return rotation * p_cam + translation; }
    Vec3 apply_inverse(const Vec3& p_canonical) const {
        return rotation.transposed() * (p_canonical - translation);
    }

    void validate() const {
        Mat3 rtr = rotation.transposed() * rotation;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double expected = i == j ? 1.0 : 0.0;
                if (std::abs(rtr(i, j) - expected) > 1e-6)
                    throw std::runtime_error("rotation is not orthonormal");
            }
        if (std::abs(rotation.det() - 1.0) > 1e-6)
            throw std::runtime_error("rotation determinant is not +1");
    }
};

struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0 || fy <= 0) throw std::runtime_error("focal lengths must be positive");
        if (cx < 0 || cx >= width || cy < 0 || cy >= height)
            throw std::runtime_error("principal point outside image");
    }
};

// H x W x 3 color values in [0,1], row major, channel fastest.
struct Image {
    int width = 0, height = 0, channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c = 3)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

    float& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

struct CameraView {
    Image image;
    CameraIntrinsics intrinsics;
    HandPose pose;   // camera -> canonical
    int view_id = 0;

    void validate() const {
        intrinsics.validate();
        pose.validate();
        if (image.width != intrinsics.width || image.height != intrinsics.height)
            throw std::runtime_error("image dimensions do not match intrinsics");
    }
};

struct PixelSample {
    double u = 0, v = 0, depth = 0;
    bool valid = false;
};

// p_cam = pi^-1(p); (u,v) = (fx x/z + cx, fy y/z + cy). Points at or behind
// the camera plane are flagged invalid.
inline PixelSample canonical_to_pixel(const Vec3& p, const CameraView& view) {
    Vec3 p_cam = view.pose.apply_inverse(p);
    PixelSample s;
    s.depth = p_cam.z;
    if (p_cam.z <= 1e-6) return s;
    s.u = view.intrinsics.fx * p_cam.x / p_cam.z + view.intrinsics.cx;
    s.v = view.intrinsics.fy * p_cam.y / p_cam.z + view.intrinsics.cy;
    s.valid = true;
    return s;
}

// Feature map with F channels on an h x w grid; channel fastest.
struct FeatureMap {
    int width = 0, height = 0, channels = 0;
    std::vector<float> data;

    FeatureMap() = default;
    FeatureMap(int w, int h, int c)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

    const float* cell(int x, int y) const {
        return &data[(static_cast<std::size_t>(y) * width + x) * channels];
    }
    float* cell(int x, int y) {
        return &data[(static_cast<std::size_t>(y) * width + x) * channels];
    }
};

// Interpolation stencil of one bilinear lookup: four clamped feature cells
// and their weights. Samples outside the image are flagged invalid and read
// as an exactly-zero vector.
struct BilinearTap {
    bool valid = false;
    int x[4] = {0, 0, 0, 0};
    int y[4] = {0, 0, 0, 0};
    float w[4] = {0, 0, 0, 0};
};

inline BilinearTap bilinear_tap(int fm_width, int fm_height, double u, double v,
                                int image_width, int image_height) {
    BilinearTap t;
    if (u < 0 || u >= image_width || v < 0 || v >= image_height) return t;
    double sx = u * fm_width / image_width - 0.5;
    double sy = v * fm_height / image_height - 0.5;
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    double wx = sx - x0, wy = sy - y0;
    auto clampi = [](int i, int n) { return std::clamp(i, 0, n - 1); };
    int corner = 0;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx, ++corner) {
            t.x[corner] = clampi(x0 + dx, fm_width);
            t.y[corner] = clampi(y0 + dy, fm_height);
            t.w[corner] = static_cast<float>((dx ? wx : 1 - wx) * (dy ? wy : 1 - wy));
        }
    t.valid = true;
    return t;
}

// Bilinear lookup at image coordinates (u, v); feature cells are scaled
// proportionally from image pixels (cell centers at +0.5). Samples outside
// the image produce an exactly-zero vector; in-bounds taps clamp at borders.
inline std::vector<float> sample_feature(const FeatureMap& fm, double u, double v,
                                         int image_width, int image_height) {
    std::vector<float> out(fm.channels, 0.0f);
    BilinearTap t = bilinear_tap(fm.width, fm.height, u, v, image_width, image_height);
    if (!t.valid) return out;
    for (int k = 0; k < 4; ++k) {
        const float* cell = fm.cell(t.x[k], t.y[k]);
        for (int c = 0; c < fm.channels; ++c) out[c] += cell[c] * t.w[k];
    }
    return out;
}

// Centers of the cells_per_axis^3 lattice over the canonical cube (the latent
// cells at the default 8).
inline Vec3 cell_center(const GridSpec& spec, int cells_per_axis, int i, int j, int k) {
    double cell = 2.0 * spec.half_extent / cells_per_axis;
    return spec.origin + Vec3{(i + 0.5) * cell, (j + 0.5) * cell, (k + 0.5) * cell};
}

// Gathers one feature vector per latent cell by projecting the cell center
// into the view; invalid or out-of-view projections contribute zeros.
// Output layout: cell-major (i,j,k row major, k fastest), channel fastest.
// The optional tap list (one per cell, same order) lets training scatter
// gradients back through the identical interpolation stencil.
inline std::vector<float> build_aligned_feature_grid(const FeatureMap& fm, const CameraView& view,
                                                     const GridSpec& spec,
                                                     int cells_per_axis = 8,
                                                     std::vector<BilinearTap>* taps_out = nullptr) {
    const int S = cells_per_axis;
    std::vector<float> cube(static_cast<std::size_t>(S) * S * S * fm.channels, 0.0f);
    if (taps_out) taps_out->assign(static_cast<std::size_t>(S) * S * S, BilinearTap{});
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            for (int k = 0; k < S; ++k) {
                std::size_t cell = (static_cast<std::size_t>(i) * S + j) * S + k;
                PixelSample px = canonical_to_pixel(cell_center(spec, S, i, j, k), view);
                if (!px.valid) continue;
                BilinearTap tap = bilinear_tap(fm.width, fm.height, px.u, px.v,
                                               view.intrinsics.width, view.intrinsics.height);
                if (!tap.valid) continue;
                if (taps_out) (*taps_out)[cell] = tap;
                float* dst = &cube[cell * fm.channels];
                for (int n = 0; n < 4; ++n) {
                    const float* src = fm.cell(tap.x[n], tap.y[n]);
                    for (int c = 0; c < fm.channels; ++c) dst[c] += src[c] * tap.w[n];
                }
            }
    return cube;
}

// Pose/intrinsics JSON: {R(row-major 9), t(3), fx, fy, cx, cy, width, height}.
inline nlohmann::json pose_to_json(const HandPose& pose, const CameraIntrinsics& intr) {
    nlohmann::json j;
    j["R"] = pose.rotation.m;
    j["t"] = {pose.translation.x, pose.translation.y, pose.translation.z};
    j["fx"] = intr.fx;
    j["fy"] = intr.fy;
    j["cx"] = intr.cx;
    j["cy"] = intr.cy;
    j["width"] = intr.width;
    j["height"] = intr.height;
    return j;
}

inline void pose_from_json(const nlohmann::json& j, HandPose& pose, CameraIntrinsics& intr) {
    auto r = j.at("R");
    for (int i = 0; i < 9; ++i) pose.rotation.m[i] = r.at(i).get<double>();
    auto t = j.at("t");
    pose.translation = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
    intr.fx = j.at("fx").get<double>();
    intr.fy = j.at("fy").get<double>();
    intr.cx = j.at("cx").get<double>();
    intr.cy = j.at("cy").get<double>();
    intr.width = j.at("width").get<int>();
    intr.height = j.at("height").get<int>();
}

}  // namespace svho
