#pragma once

// Triangle mesh container, ASCII OBJ I/O (v/f records only) and parametric
// primitives used by the toy generator and the test oracles.

#include <cstdio>
#include <map>
#include <sstream>

#include "svho/core.hpp"

namespace svho {

struct Mesh {
    std::vector<Vec3> vertices;                   // canonical-frame meters
    std::vector<std::array<int, 3>> triangles;    // indices into vertices

    bool empty() const { return triangles.empty(); }

    void validate() const {
        int n = static_cast<int>(vertices.size());
        for (const auto& t : triangles) {
            for (int i : t)
                if (i < 0 || i >= n) throw std::runtime_error("triangle index out of range");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw std::runtime_error("degenerate triangle with repeated indices");
        }
    }

    Mesh transformed(const Mat3& rot, const Vec3& trans) const {
        Mesh out = *this;
        for (auto& v : out.vertices) v = rot * v + trans;
        return out;
    }

    void append(const Mesh& other) {
        int base = static_cast<int>(vertices.size());
        vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
        for (auto t : other.triangles) {
            t[0] += base;
            t[1] += base;
            t[2] += base;
            triangles.push_back(t);
        }
    }

    double surface_area() const {
        double a = 0.0;
        for (const auto& t : triangles) {
            Vec3 e1 = vertices[t[1]] - vertices[t[0]];
            Vec3 e2 = vertices[t[2]] - vertices[t[0]];
            a += 0.5 * e1.cross(e2).norm();
        }
        return a;
    }

    void bounds(Vec3& lo, Vec3& hi) const {
        lo = {1e30, 1e30, 1e30};
        hi = {-1e30, -1e30, -1e30};
        for (const auto& v : vertices) {
            lo = min3(lo, v);
            hi = max3(hi, v);
        }
    }
};

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void write_obj(const Mesh& mesh, const std::string& path) {
    std::ostringstream os;
    for (const auto& v : mesh.vertices)
        os << "v " << format_double(v.x) << ' ' << format_double(v.y) << ' '
           << format_double(v.z) << '\n';
    for (const auto& t : mesh.triangles)
        os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    write_text_file(path, os.str());
}

// Reads v/f records; polygonal faces are fanned into triangles, negative
// indices resolved relative to the current vertex count. Other record types
// are ignored.
inline Mesh read_obj(const std::string& path) {
    std::istringstream is(read_text_file(path));
    Mesh mesh;
    std::string line;
    while (std::getline(is, line)) {
        if (line.size() < 2) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 v;
            ls >> v.x >> v.y >> v.z;
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                // strip "/vt/vn" suffixes
                std::size_t slash = tok.find('/');
                if (slash != std::string::npos) tok = tok.substr(0, slash);
                int i = std::stoi(tok);
                if (i < 0)
                    i = static_cast<int>(mesh.vertices.size()) + i;
                else
                    i = i - 1;
                idx.push_back(i);
            }
            for (std::size_t k = 2; k < idx.size(); ++k)
                mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
        }
    }
    mesh.validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// Primitives. All are closed, outward-oriented and centered on the origin
// unless stated otherwise.

inline Mesh make_icosphere(double radius, int subdivisions = 3) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& v : verts) v = v.normalized();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 m = ((verts[a] + verts[b]) * 0.5).normalized();
            verts.push_back(m);
            int id = static_cast<int>(verts.size()) - 1;
            midpoint[key] = id;
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        faces = std::move(next);
    }

    Mesh m;
    m.vertices.reserve(verts.size());
    for (const auto& v : verts) m.vertices.push_back(v * radius);
    m.triangles = faces;
    return m;
}

inline Mesh make_box(const Vec3& half_size) {
    Mesh m;
    const double x = half_size.x, y = half_size.y, z = half_size.z;
    m.vertices = {{-x, -y, -z}, {x, -y, -z}, {x, y, -z}, {-x, y, -z},
                  {-x, -y, z},  {x, -y, z},  {x, y, z},  {-x, y, z}};
    // CCW seen from outside
    m.triangles = {{0, 2, 1}, {0, 3, 2},   // -z
                   {4, 5, 6}, {4, 6, 7},   // +z
                   {0, 1, 5}, {0, 5, 4},   // -y
                   {3, 7, 6}, {3, 6, 2},   // +y
                   {0, 4, 7}, {0, 7, 3},   // -x
                   {1, 2, 6}, {1, 6, 5}};  // +x
    return m;
}

// Cylinder along +z spanning z in [-half_height, half_height], with caps.
inline Mesh make_cylinder(double radius, double half_height, int segments = 32) {
    Mesh m;
    for (int ring = 0; ring < 2; ++ring) {
        double z = ring == 0 ? -half_height : half_height;
        for (int i = 0; i < segments; ++i) {
            double a = 2.0 * M_PI * i / segments;
            m.vertices.push_back({radius * std::cos(a), radius * std::sin(a), z});
        }
    }
    int bottom_center = static_cast<int>(m.vertices.size());
    m.vertices.push_back({0, 0, -half_height});
    int top_center = static_cast<int>(m.vertices.size());
    m.vertices.push_back({0, 0, half_height});

    for (int i = 0; i < segments; ++i) {
        int j = (i + 1) % segments;
        int b0 = i, b1 = j, t0 = segments + i, t1 = segments + j;
        m.triangles.push_back({b0, b1, t1});
        m.triangles.push_back({b0, t1, t0});
        m.triangles.push_back({bottom_center, b1, b0});
        m.triangles.push_back({top_center, t0, t1});
    }
    return m;
}

// Capsule between two endpoints: a cylinder with hemispherical caps,
// tessellated as a UV sphere split at the equator.
inline Mesh make_capsule(const Vec3& a, const Vec3& b, double radius, int segments = 16,
                         int rings = 8) {
    Vec3 axis = b - a;
    double len = axis.norm();
    Vec3 dir = len > 1e-12 ? axis / len : Vec3{0, 0, 1};

    // Orthonormal frame around dir.
    Vec3 up = std::abs(dir.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    Vec3 u = dir.cross(up).normalized();
    Vec3 v = dir.cross(u);

    Mesh m;
    auto ring_point = [&](const Vec3& center, double r, double h, int i) {
        double ang = 2.0 * M_PI * i / segments;
        return center + u * (r * std::cos(ang)) + v * (r * std::sin(ang)) + dir * h;
    };

    // bottom pole, bottom hemisphere rings, top hemisphere rings, top pole
    m.vertices.push_back(a - dir * radius);
    for (int k = rings - 1; k >= 0; --k) {
        double t = (k + 0.5) / rings * (M_PI / 2.0);  // latitude from equator
        double r = radius * std::cos(t), h = -radius * std::sin(t);
        for (int i = 0; i < segments; ++i) m.vertices.push_back(ring_point(a, r, h, i));
    }
    for (int k = 0; k < rings; ++k) {
        double t = (k + 0.5) / rings * (M_PI / 2.0);
        double r = radius * std::cos(t), h = radius * std::sin(t);
        for (int i = 0; i < segments; ++i) m.vertices.push_back(ring_point(b, r, h, i));
    }
    m.vertices.push_back(b + dir * radius);

    int nrings = 2 * rings;
    auto rv = [&](int ring, int i) { return 1 + ring * segments + (i % segments); };

    int bottom_pole = 0;
    int top_pole = static_cast<int>(m.vertices.size()) - 1;
    for (int i = 0; i < segments; ++i)
        m.triangles.push_back({bottom_pole, rv(0, i + 1), rv(0, i)});
    for (int k = 0; k + 1 < nrings; ++k)
        for (int i = 0; i < segments; ++i) {
            int a0 = rv(k, i), a1 = rv(k, i + 1), b0 = rv(k + 1, i), b1 = rv(k + 1, i + 1);
            m.triangles.push_back({a0, a1, b1});
            m.triangles.push_back({a0, b1, b0});
        }
    for (int i = 0; i < segments; ++i)
        m.triangles.push_back({top_pole, rv(nrings - 1, i), rv(nrings - 1, i + 1)});
    return m;
}

// Area-weighted uniform surface sampling, seeded.
inline std::vector<Vec3> sample_surface_points(const Mesh& mesh, int n, std::uint64_t seed) {
    if (mesh.empty()) throw std::runtime_error("empty geometry");
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
        Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
        total += 0.5 * e1.cross(e2).norm();
        cumulative[i] = total;
    }
    if (total <= 0.0) throw std::runtime_error("mesh has zero surface area");

    Rng rng(seed, 0x5a17);
    std::vector<Vec3> pts(n);
    for (int k = 0; k < n; ++k) {
        double r = rng.uniform() * total;
        std::size_t idx =
            std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin();
        if (idx >= mesh.triangles.size()) idx = mesh.triangles.size() - 1;
        const auto& t = mesh.triangles[idx];
        double u = rng.uniform(), v = rng.uniform();
        double su = std::sqrt(u);
        double b0 = 1.0 - su, b1 = su * (1.0 - v), b2 = su * v;
        pts[k] = mesh.vertices[t[0]] * b0 + mesh.vertices[t[1]] * b1 + mesh.vertices[t[2]] * b2;
    }
    return pts;
}

}  // namespace svho
