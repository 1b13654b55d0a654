#pragma once

// Tiny deterministic z-buffer rasterizer: flat-shaded triangles with a
// per-face headlight term. Good enough to give the image model silhouettes
// and coarse shading; not meant to look pretty.

#include "svho/camera.hpp"
#include "svho/mesh.hpp"

namespace svho {

struct RenderItem {
    const Mesh* mesh = nullptr;
    Vec3 color;  // rgb in [0,1]
};

// Rasterize items (in canonical coordinates) through the given camera.
// Optionally records which item covered each pixel (-1 = background).
inline Image render_scene(const std::vector<RenderItem>& items, const CameraIntrinsics& intr,
                          const HandPose& pose, const Vec3& background,
                          std::vector<int>* item_ids = nullptr) {
    intr.validate();
    const int W = intr.width, H = intr.height;
    Image img(W, H, 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            img.at(x, y, 0) = static_cast<float>(background.x);
            img.at(x, y, 1) = static_cast<float>(background.y);
            img.at(x, y, 2) = static_cast<float>(background.z);
        }
    std::vector<double> zbuf(static_cast<std::size_t>(W) * H,
                             std::numeric_limits<double>::infinity());
    if (item_ids) item_ids->assign(static_cast<std::size_t>(W) * H, -1);

    for (std::size_t it = 0; it < items.size(); ++it) {
        const Mesh& mesh = *items[it].mesh;
        const Vec3& base = items[it].color;
        for (const auto& tri : mesh.triangles) {
            Vec3 cam[3];
            double u[3], v[3];
            bool ok = true;
            for (int i = 0; i < 3; ++i) {
                cam[i] = pose.apply_inverse(mesh.vertices[static_cast<std::size_t>(tri[i])]);
                if (cam[i].z <= 1e-6) {
                    ok = false;
                    break;
                }
                u[i] = intr.fx * cam[i].x / cam[i].z + intr.cx;
                v[i] = intr.fy * cam[i].y / cam[i].z + intr.cy;
            }
            if (!ok) continue;

            double area = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0]);
            if (std::abs(area) < 1e-12) continue;

            // two-sided flat shading with a headlight at the camera
            Vec3 n = (cam[1] - cam[0]).cross(cam[2] - cam[0]);
            Vec3 centroid = (cam[0] + cam[1] + cam[2]) / 3.0;
            double nl = n.norm() * centroid.norm();
            double shade = nl > 1e-12 ? 0.3 + 0.7 * std::abs(n.dot(centroid)) / nl : 0.3;
            Vec3 color = base * shade;

            int x0 = std::max(0, static_cast<int>(std::floor(std::min({u[0], u[1], u[2]}))));
            int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max({u[0], u[1], u[2]}))));
            int y0 = std::max(0, static_cast<int>(std::floor(std::min({v[0], v[1], v[2]}))));
            int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max({v[0], v[1], v[2]}))));

            double inv_area = 1.0 / area;
            for (int py = y0; py <= y1; ++py)
                for (int px = x0; px <= x1; ++px) {
                    double cx = px + 0.5, cy = py + 0.5;
                    double w0 = ((u[1] - cx) * (v[2] - cy) - (v[1] - cy) * (u[2] - cx)) * inv_area;
                    double w1 = ((u[2] - cx) * (v[0] - cy) - (v[2] - cy) * (u[0] - cx)) * inv_area;
                    double w2 = 1.0 - w0 - w1;
                    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                    // perspective-correct depth via interpolated 1/z
                    double inv_z = w0 / cam[0].z + w1 / cam[1].z + w2 / cam[2].z;
                    double z = 1.0 / inv_z;
                    std::size_t pix = static_cast<std::size_t>(py) * W + px;
                    if (z >= zbuf[pix]) continue;
                    zbuf[pix] = z;
                    img.at(px, py, 0) = static_cast<float>(std::clamp(color.x, 0.0, 1.0));
                    img.at(px, py, 1) = static_cast<float>(std::clamp(color.y, 0.0, 1.0));
                    img.at(px, py, 2) = static_cast<float>(std::clamp(color.z, 0.0, 1.0));
                    if (item_ids) (*item_ids)[pix] = static_cast<int>(it);
                }
        }
    }
    return img;
}

}  // namespace svho
