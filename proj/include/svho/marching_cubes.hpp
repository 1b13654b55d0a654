#pragma once

// Classic 256-case marching cubes over voxel-center lattices, with vertices
// welded on shared lattice edges so extracted surfaces are watertight.
// Tables follow the Bourke layout; corner i of a cell at lattice point
// (x,y,z) sits at (x,y,z) + kCornerOffset[i].

#include <unordered_map>

#include "svho/grid.hpp"
#include "svho/mesh.hpp"

namespace svho {
namespace mc_detail {

#include "svho/marching_cubes_tables.inc"

inline constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
    {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1},
};

inline constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

}  // namespace mc_detail

// Extracts the `level` isosurface as a triangle mesh with vertex positions in
// canonical meters (linear interpolation along voxel-center edges). A grid
// with no zero crossing yields an empty mesh.
inline Mesh extract_mesh(const TsdfGrid& grid, double level = 0.0) {
    using namespace mc_detail;
    const int R = grid.spec.resolution;
    const double vs = grid.spec.voxel_size();
    const Vec3 base = grid.spec.origin + Vec3{0.5 * vs, 0.5 * vs, 0.5 * vs};

    Mesh mesh;
    // Welding key: lattice point packed with the edge axis (0=x, 1=y, 2=z).
    std::unordered_map<std::uint64_t, int> edge_vertex;
    auto weld_key = [R](int x, int y, int z, int axis) {
        return ((static_cast<std::uint64_t>(x) * R + y) * R + z) * 4 + axis;
    };

    double vals[8];
    int cell_verts[12];
    for (int cx = 0; cx + 1 < R; ++cx)
        for (int cy = 0; cy + 1 < R; ++cy)
            for (int cz = 0; cz + 1 < R; ++cz) {
                int cube_index = 0;
                for (int i = 0; i < 8; ++i) {
                    vals[i] = grid.at(cx + kCornerOffset[i][0], cy + kCornerOffset[i][1],
                                      cz + kCornerOffset[i][2]);
                    if (vals[i] < level) cube_index |= 1 << i;
                }
                int edges = kEdgeTable[cube_index];
                if (edges == 0) continue;

                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1 << e))) continue;
                    int a = kEdgeCorner[e][0], b = kEdgeCorner[e][1];
                    int ax = cx + kCornerOffset[a][0], ay = cy + kCornerOffset[a][1],
                        az = cz + kCornerOffset[a][2];
                    int bx = cx + kCornerOffset[b][0], by = cy + kCornerOffset[b][1],
                        bz = cz + kCornerOffset[b][2];
                    // The edge runs along exactly one axis; key it at its min corner.
                    int axis = bx != ax ? 0 : (by != ay ? 1 : 2);
                    int mx = std::min(ax, bx), my = std::min(ay, by), mz = std::min(az, bz);
                    std::uint64_t key = weld_key(mx, my, mz, axis);
                    auto it = edge_vertex.find(key);
                    if (it == edge_vertex.end()) {
                        double denom = vals[b] - vals[a];
                        double t = std::abs(denom) < 1e-12 ? 0.5 : (level - vals[a]) / denom;
                        t = std::clamp(t, 0.0, 1.0);
                        Vec3 pa = base + Vec3{ax * vs, ay * vs, az * vs};
                        Vec3 pb = base + Vec3{bx * vs, by * vs, bz * vs};
                        mesh.vertices.push_back(pa + (pb - pa) * t);
                        it = edge_vertex.emplace(key, static_cast<int>(mesh.vertices.size()) - 1)
                                 .first;
                    }
                    cell_verts[e] = it->second;
                }

                const int* tri = kTriTable[cube_index];
                for (int i = 0; tri[i] != -1; i += 3) {
                    int v0 = cell_verts[tri[i]], v1 = cell_verts[tri[i + 1]],
                        v2 = cell_verts[tri[i + 2]];
                    if (v0 == v1 || v1 == v2 || v0 == v2) continue;  // zero-area sliver
                    mesh.triangles.push_back({v0, v1, v2});
                }
            }
    return mesh;
}

}  // namespace svho
