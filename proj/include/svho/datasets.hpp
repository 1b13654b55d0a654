#pragma once

// Dataset plumbing: manifest loaders for obman-style / dexycb-style layouts
// and a procedural desk-scale toy generator (capsule hand proxy grasping a
// primitive object, cameras on a ring) so the full pipeline runs without any
// external data.

#include <cstdio>
#include <filesystem>
#include <set>

#include "svho/camera.hpp"
#include "svho/marching_cubes.hpp"
#include "svho/mesh.hpp"
#include "svho/metrics.hpp"
#include "svho/png_io.hpp"
#include "svho/render.hpp"

namespace svho {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Frame records and manifest loading.

struct FrameView {
    int view_id = 0;
    std::string image_path;
    CameraIntrinsics intrinsics;
    HandPose pose;  // camera -> canonical
};

struct FrameRecord {
    std::string frame_id;
    std::string split;         // "train" or "test"
    std::string object_label;  // optional category tag (toy: primitive family)
    std::string hand_mesh_path;
    std::string object_mesh_path;
    std::vector<FrameView> views;

    void validate() const {
        if (frame_id.empty()) throw std::runtime_error("frame record without id");
        if (views.empty())
            throw std::runtime_error("frame " + frame_id + " has no views");
        for (const auto& v : views) {
            v.intrinsics.validate();
            v.pose.validate();
        }
    }

    CameraView load_view(std::size_t i) const {
        const FrameView& fv = views.at(i);
        CameraView view;
        view.view_id = fv.view_id;
        view.intrinsics = fv.intrinsics;
        view.pose = fv.pose;
        view.image = read_png(fv.image_path);
        view.validate();
        return view;
    }

    std::vector<CameraView> load_all_views() const {
        std::vector<CameraView> out;
        out.reserve(views.size());
        for (std::size_t i = 0; i < views.size(); ++i) out.push_back(load_view(i));
        return out;
    }
};

enum class ManifestFormat { kObmanStyle, kDexycbStyle };

inline ManifestFormat manifest_format_from_string(const std::string& s) {
    if (s == "obman-style") return ManifestFormat::kObmanStyle;
    if (s == "dexycb-style") return ManifestFormat::kDexycbStyle;
    throw std::runtime_error("unknown manifest format: " + s +
                             " (expected obman-style or dexycb-style)");
}

struct ManifestLoad {
    std::vector<FrameRecord> records;
    std::vector<std::string> warnings;
};

// Smallest distance between two mesh surfaces, approximated from seeded
// surface samples. Used by the dexycb-style hand-object proximity filter.
inline double min_surface_distance(const Mesh& a, const Mesh& b, int samples = 4096) {
    std::vector<Vec3> pa = sample_surface_points(a, samples, 1234);
    std::vector<Vec3> pb = sample_surface_points(b, samples, 1234);
    KdTree3 tb(pb);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : pa) best = std::min(best, tb.nearest2(p));
    return std::sqrt(best);
}

// Reads root/manifest.jsonl (one frame per line) and resolves all referenced
// files. Frames with missing files are skipped with a warning; dexycb-style
// loads additionally drop frames whose hand and object are farther apart
// than max_hand_object_distance.
inline ManifestLoad load_manifest(const std::string& root, ManifestFormat format,
                                  double max_hand_object_distance = 0.005) {
    ManifestLoad out;
    fs::path manifest = fs::path(root) / "manifest.jsonl";
    if (!fs::exists(manifest)) {
        out.warnings.push_back("no manifest.jsonl under " + root);
        return out;
    }
    std::ifstream f(manifest);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            out.warnings.push_back("manifest line " + std::to_string(line_no) +
                                   " is not valid json: " + e.what());
            continue;
        }
        FrameRecord rec;
        try {
            rec.frame_id = j.at("frame_id").get<std::string>();
            rec.split = j.value("split", std::string("train"));
            rec.object_label = j.value("object_label", std::string());
            rec.hand_mesh_path = (fs::path(root) / j.at("hand_mesh").get<std::string>()).string();
            rec.object_mesh_path =
                (fs::path(root) / j.at("object_mesh").get<std::string>()).string();
            std::vector<std::string> missing;
            for (const json& vj : j.at("views")) {
                FrameView fv;
                fv.view_id = vj.at("view_id").get<int>();
                fv.image_path = (fs::path(root) / vj.at("image").get<std::string>()).string();
                std::string pose_path =
                    (fs::path(root) / vj.at("pose").get<std::string>()).string();
                if (!fs::exists(fv.image_path)) missing.push_back(fv.image_path);
                if (!fs::exists(pose_path)) {
                    missing.push_back(pose_path);
                } else {
                    json pj = json::parse(read_text_file(pose_path));
                    pose_from_json(pj, fv.pose, fv.intrinsics);
                }
                rec.views.push_back(std::move(fv));
            }
            if (!fs::exists(rec.hand_mesh_path)) missing.push_back(rec.hand_mesh_path);
            if (!fs::exists(rec.object_mesh_path)) missing.push_back(rec.object_mesh_path);
            if (!missing.empty()) {
                std::string w = "frame " + rec.frame_id + ": missing files:";
                for (const auto& m : missing) w += " " + m;
                out.warnings.push_back(w);
                continue;
            }
            rec.validate();
        } catch (const std::exception& e) {
            out.warnings.push_back("manifest line " + std::to_string(line_no) + ": " + e.what());
            continue;
        }
        if (format == ManifestFormat::kDexycbStyle) {
            Mesh hand = read_obj(rec.hand_mesh_path);
            Mesh object = read_obj(rec.object_mesh_path);
            double d = min_surface_distance(hand, object);
            if (d >= max_hand_object_distance) {
                out.warnings.push_back("frame " + rec.frame_id +
                                       " excluded by proximity filter (distance " +
                                       std::to_string(d) + " m)");
                continue;
            }
        }
        out.records.push_back(std::move(rec));
    }
    std::sort(out.records.begin(), out.records.end(),
              [](const FrameRecord& a, const FrameRecord& b) { return a.frame_id < b.frame_id; });
    return out;
}

// ---------------------------------------------------------------------------
// Toy scenes.

struct ToySceneConfig {
    std::uint64_t seed = 1;
    double object_scale_min = 0.05;  // overall primitive size, meters
    double object_scale_max = 0.09;
    double cube_half_extent = 0.2;  // canonical workspace half-width
    // hand proxy: one palm capsule plus finger capsules arcing over the object
    double palm_radius = 0.035;
    int finger_count = 4;
    double finger_radius = 0.011;
    int camera_count = 8;
    double ring_radius = 0.45;
    int image_size = 96;
    int clutter_count = 3;

    void validate() const {
        if (camera_count < 1) throw std::runtime_error("camera_count must be >= 1");
        if (image_size < 16) throw std::runtime_error("image_size too small");
        if (object_scale_min <= 0.0 || object_scale_max < object_scale_min)
            throw std::runtime_error("bad object scale range");
        if (finger_count < 1 || palm_radius <= 0.0 || finger_radius <= 0.0)
            throw std::runtime_error("bad hand proxy spec");
        if (clutter_count < 0) throw std::runtime_error("clutter_count must be >= 0");
        // everything the grasp can produce has to fit in the canonical cube
        double reach = (palm_radius - 0.021) + 0.5 * object_scale_max * (1.0 + 1.7321) + 0.012;
        if (reach > cube_half_extent)
            throw std::runtime_error("object scale range does not fit the canonical cube");
    }
};

inline json toy_config_to_json(const ToySceneConfig& c) {
    return {{"seed", c.seed},
            {"object_scale_min", c.object_scale_min},
            {"object_scale_max", c.object_scale_max},
            {"cube_half_extent", c.cube_half_extent},
            {"palm_radius", c.palm_radius},
            {"finger_count", c.finger_count},
            {"finger_radius", c.finger_radius},
            {"camera_count", c.camera_count},
            {"ring_radius", c.ring_radius},
            {"image_size", c.image_size},
            {"clutter_count", c.clutter_count}};
}

inline ToySceneConfig toy_config_from_json(const json& j) {
    ToySceneConfig c;
    c.seed = j.value("seed", c.seed);
    c.object_scale_min = j.value("object_scale_min", c.object_scale_min);
    c.object_scale_max = j.value("object_scale_max", c.object_scale_max);
    c.cube_half_extent = j.value("cube_half_extent", c.cube_half_extent);
    c.palm_radius = j.value("palm_radius", c.palm_radius);
    c.finger_count = j.value("finger_count", c.finger_count);
    c.finger_radius = j.value("finger_radius", c.finger_radius);
    c.camera_count = j.value("camera_count", c.camera_count);
    c.ring_radius = j.value("ring_radius", c.ring_radius);
    c.image_size = j.value("image_size", c.image_size);
    c.clutter_count = j.value("clutter_count", c.clutter_count);
    c.validate();
    return c;
}

struct CapsuleSpec {
    Vec3 a, b;
    double radius = 0.0;

    double sdf(const Vec3& p) const {
        Vec3 ab = b - a;
        double t = std::clamp((p - a).dot(ab) / ab.norm2(), 0.0, 1.0);
        return (p - (a + ab * t)).norm() - radius;
    }
};

enum class PrimitiveFamily { kSphere = 0, kBox = 1, kCylinder = 2 };

inline const char* primitive_family_name(PrimitiveFamily f) {
    switch (f) {
        case PrimitiveFamily::kSphere: return "sphere";
        case PrimitiveFamily::kBox: return "box";
        default: return "cylinder";
    }
}

// A primitive rotated about +x and translated. Rotating only about x keeps
// the support distance along -x analytic, which is what lets the generator
// place the object exactly touching the palm.
struct PrimitiveSpec {
    PrimitiveFamily family = PrimitiveFamily::kSphere;
    Vec3 center;
    double angle_x = 0.0;
    Vec3 params;  // sphere: (r,-,-); box: half extents; cylinder: (r, half_height, -)

    double sdf(const Vec3& p) const {
        Vec3 q = Mat3::axis_angle({1, 0, 0}, -angle_x) * (p - center);
        switch (family) {
            case PrimitiveFamily::kSphere:
                return q.norm() - params.x;
            case PrimitiveFamily::kBox: {
                Vec3 d{std::abs(q.x) - params.x, std::abs(q.y) - params.y,
                       std::abs(q.z) - params.z};
                Vec3 dp{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
                return dp.norm() + std::min(std::max({d.x, d.y, d.z}), 0.0);
            }
            default: {
                double dr = std::sqrt(q.x * q.x + q.y * q.y) - params.x;
                double dz = std::abs(q.z) - params.y;
                double drp = std::max(dr, 0.0), dzp = std::max(dz, 0.0);
                return std::sqrt(drp * drp + dzp * dzp) + std::min(std::max(dr, dz), 0.0);
            }
        }
    }

    // distance from center to the surface walking along -x
    double support_minus_x() const {
        switch (family) {
            case PrimitiveFamily::kSphere: return params.x;
            case PrimitiveFamily::kBox: return params.x;
            default: return params.x;  // axis stays perpendicular to x
        }
    }

    double bounding_radius() const {
        switch (family) {
            case PrimitiveFamily::kSphere: return params.x;
            case PrimitiveFamily::kBox: return params.norm();
            default: return std::sqrt(params.x * params.x + params.y * params.y);
        }
    }

    Mesh mesh() const {
        Mesh m;
        switch (family) {
            case PrimitiveFamily::kSphere: m = make_icosphere(params.x, 3); break;
            case PrimitiveFamily::kBox: m = make_box(params); break;
            default: m = make_cylinder(params.x, params.y, 48); break;
        }
        return m.transformed(Mat3::axis_angle({1, 0, 0}, angle_x), center);
    }
};

struct ToyScene {
    std::string frame_id;
    ToySceneConfig cfg;
    int index = 0;
    PrimitiveFamily family = PrimitiveFamily::kSphere;
    std::vector<CapsuleSpec> hand_capsules;
    PrimitiveSpec object;
    std::vector<PrimitiveSpec> clutter;
    Vec3 background;
    Mesh hand_mesh, object_mesh;  // ground truth, canonical frame
    std::vector<Mesh> clutter_meshes;
    std::vector<CameraView> views;  // images empty until rendered

    double hand_sdf(const Vec3& p) const {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& c : hand_capsules) d = std::min(d, c.sdf(p));
        return d;
    }
    double object_sdf(const Vec3& p) const { return object.sdf(p); }

    static Vec3 hand_color() { return {0.85, 0.62, 0.48}; }
    Vec3 object_color() const {
        switch (family) {
            case PrimitiveFamily::kSphere: return {0.20, 0.45, 0.85};
            case PrimitiveFamily::kBox: return {0.85, 0.30, 0.25};
            default: return {0.30, 0.75, 0.35};
        }
    }

    // hand first, object second, then clutter — tests key off these indices
    std::vector<RenderItem> render_items() const {
        std::vector<RenderItem> items;
        items.push_back({&hand_mesh, hand_color()});
        items.push_back({&object_mesh, object_color()});
        for (std::size_t i = 0; i < clutter_meshes.size(); ++i) {
            double t = clutter.empty() ? 0.0 : static_cast<double>(i) / clutter_meshes.size();
            items.push_back({&clutter_meshes[i], {0.45 + 0.2 * t, 0.40, 0.55 - 0.2 * t}});
        }
        return items;
    }
};

namespace toy_detail {

// camera -> canonical look-at pose: camera z points at the target, y runs
// down the image, x to the right.
inline HandPose look_at(const Vec3& eye, const Vec3& target) {
    Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross({0, 0, 1}).normalized();
    Vec3 y = z.cross(x);
    HandPose pose;
    for (int r = 0; r < 3; ++r) {
        pose.rotation(r, 0) = r == 0 ? x.x : (r == 1 ? x.y : x.z);
        pose.rotation(r, 1) = r == 0 ? y.x : (r == 1 ? y.y : y.z);
        pose.rotation(r, 2) = r == 0 ? z.x : (r == 1 ? z.y : z.z);
    }
    pose.translation = eye;
    return pose;
}

inline PrimitiveSpec random_primitive(Rng& rng, double scale_min, double scale_max) {
    PrimitiveSpec p;
    p.family = static_cast<PrimitiveFamily>(rng.uniform_u32(3));
    double s = rng.uniform(scale_min, scale_max);
    p.angle_x = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    switch (p.family) {
        case PrimitiveFamily::kSphere:
            p.params = {0.5 * s, 0.0, 0.0};
            break;
        case PrimitiveFamily::kBox:
            p.params = {0.5 * s, 0.5 * s * rng.uniform(0.6, 1.0), 0.5 * s * rng.uniform(0.6, 1.0)};
            break;
        default:
            p.params = {0.5 * s * rng.uniform(0.5, 0.9), 0.5 * s, 0.0};
            break;
    }
    return p;
}

}  // namespace toy_detail

// Deterministic per (cfg.seed, index). The palm capsule sits on -x, the
// object is placed so its surface is a sub-5mm gap away from the palm, and
// finger capsules arc from the palm end to just outside the object's
// bounding sphere.
inline ToyScene generate_toy_scene(const ToySceneConfig& cfg, int index) {
    cfg.validate();
    ToyScene scene;
    scene.cfg = cfg;
    scene.index = index;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "toy_%04d", index);
    scene.frame_id = buf;

    Rng rng(cfg.seed, 0x70700000u + static_cast<std::uint64_t>(index));

    // object
    scene.object = toy_detail::random_primitive(rng, cfg.object_scale_min, cfg.object_scale_max);
    scene.family = scene.object.family;
    const Vec3 palm_a{-0.075, 0.0, 0.0}, palm_b{-0.025, 0.0, 0.0};
    double gap = rng.uniform(0.0005, 0.004);
    scene.object.center = {palm_b.x + cfg.palm_radius + scene.object.support_minus_x() + gap,
                           rng.uniform(-0.008, 0.008), rng.uniform(-0.008, 0.008)};
    scene.object_mesh = scene.object.mesh();

    // hand proxy
    scene.hand_capsules.push_back({palm_a, palm_b, cfg.palm_radius});
    double r_reach = scene.object.bounding_radius() + cfg.finger_radius + 0.002;
    for (int i = 0; i < cfg.finger_count; ++i) {
        double sigma = cfg.finger_count == 1
                           ? 0.0
                           : -1.0 + 2.0 * static_cast<double>(i) / (cfg.finger_count - 1);
        Vec3 dir = Vec3{-0.35, std::sin(sigma), 0.95 * std::cos(sigma)}.normalized();
        Vec3 tip = scene.object.center + dir * r_reach;
        Vec3 base = palm_b + Vec3{0.015, 0.75 * cfg.palm_radius * std::sin(sigma),
                                  0.75 * cfg.palm_radius};
        scene.hand_capsules.push_back({base, tip, cfg.finger_radius});
    }

    // ground-truth hand mesh: zero level set of the capsule union
    {
        GridSpec fine = GridSpec::centered(96, cfg.cube_half_extent,
                                           3.0 * 2.0 * cfg.cube_half_extent / 96.0);
        TsdfGrid g(fine);
        for (int ix = 0; ix < fine.resolution; ++ix)
            for (int iy = 0; iy < fine.resolution; ++iy)
                for (int iz = 0; iz < fine.resolution; ++iz)
                    g.values[g.index(ix, iy, iz)] = static_cast<float>(std::clamp(
                        scene.hand_sdf(fine.voxel_center(ix, iy, iz)), -fine.truncation,
                        fine.truncation));
        scene.hand_mesh = extract_mesh(g, 0.0);
    }

    // geometry must stay inside the canonical workspace
    for (const auto& v : scene.object_mesh.vertices)
        if (std::max({std::abs(v.x), std::abs(v.y), std::abs(v.z)}) > cfg.cube_half_extent)
            throw std::runtime_error("generated object escapes the canonical cube");
    for (const auto& v : scene.hand_mesh.vertices)
        if (std::max({std::abs(v.x), std::abs(v.y), std::abs(v.z)}) > cfg.cube_half_extent)
            throw std::runtime_error("generated hand escapes the canonical cube");

    // background clutter: small distractor primitives on a wider shell,
    // visible to the cameras but outside the reconstruction volume's focus
    for (int i = 0; i < cfg.clutter_count; ++i) {
        PrimitiveSpec c = toy_detail::random_primitive(rng, 0.02, 0.05);
        double az = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        double el = rng.uniform(-0.5, 0.7);
        double dist = rng.uniform(0.24, 0.34);
        c.center = {dist * std::cos(el) * std::cos(az), dist * std::cos(el) * std::sin(az),
                    dist * std::sin(el)};
        scene.clutter.push_back(c);
        scene.clutter_meshes.push_back(c.mesh());
    }

    scene.background = {rng.uniform(0.06, 0.20), rng.uniform(0.06, 0.20),
                        rng.uniform(0.06, 0.20)};

    // cameras on a ring, seeded phase and per-camera elevation
    double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double fx = 0.5 * cfg.image_size * cfg.ring_radius / 0.24;
    for (int i = 0; i < cfg.camera_count; ++i) {
        double alpha = phase + 2.0 * 3.14159265358979323846 * i / cfg.camera_count;
        double elev = rng.uniform(-0.08, 0.18);
        Vec3 eye{cfg.ring_radius * std::cos(alpha), cfg.ring_radius * std::sin(alpha), elev};
        CameraView view;
        view.view_id = i;
        view.pose = toy_detail::look_at(eye, {0, 0, 0});
        view.intrinsics = {fx, fx, cfg.image_size / 2.0, cfg.image_size / 2.0, cfg.image_size,
                           cfg.image_size};
        view.pose.validate();
        scene.views.push_back(std::move(view));
    }
    return scene;
}

inline void render_toy_views(ToyScene& scene) {
    std::vector<RenderItem> items = scene.render_items();
    for (auto& view : scene.views)
        view.image = render_scene(items, view.intrinsics, view.pose, scene.background);
}

// TSDF pair sampled from the analytic scene SDFs on the given grid.
inline std::pair<TsdfGrid, TsdfGrid> toy_tsdfs(const ToyScene& scene, const GridSpec& spec) {
    TsdfGrid hand(spec), object(spec);
    for (int ix = 0; ix < spec.resolution; ++ix)
        for (int iy = 0; iy < spec.resolution; ++iy)
            for (int iz = 0; iz < spec.resolution; ++iz) {
                Vec3 p = spec.voxel_center(ix, iy, iz);
                std::size_t n = hand.index(ix, iy, iz);
                hand.values[n] = static_cast<float>(
                    std::clamp(scene.hand_sdf(p), -spec.truncation, spec.truncation));
                object.values[n] = static_cast<float>(
                    std::clamp(scene.object_sdf(p), -spec.truncation, spec.truncation));
            }
    return {std::move(hand), std::move(object)};
}

// ---------------------------------------------------------------------------
// On-disk toy dataset, mirroring the manifest layout the loaders read.

inline FrameRecord write_toy_frame(const ToyScene& scene, const std::string& root,
                                   const std::string& split) {
    fs::path frame_dir = fs::path(root) / "frames" / scene.frame_id;
    fs::create_directories(frame_dir);
    FrameRecord rec;
    rec.frame_id = scene.frame_id;
    rec.split = split;
    rec.hand_mesh_path = (frame_dir / "hand.obj").string();
    rec.object_mesh_path = (frame_dir / "object.obj").string();
    write_obj(scene.hand_mesh, rec.hand_mesh_path);
    write_obj(scene.object_mesh, rec.object_mesh_path);
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
        const CameraView& v = scene.views[i];
        char img_name[32], pose_name[32];
        std::snprintf(img_name, sizeof(img_name), "view_%02zu.png", i);
        std::snprintf(pose_name, sizeof(pose_name), "view_%02zu.json", i);
        FrameView fv;
        fv.view_id = v.view_id;
        fv.intrinsics = v.intrinsics;
        fv.pose = v.pose;
        fv.image_path = (frame_dir / img_name).string();
        write_png(v.image, fv.image_path);
        write_text_file((frame_dir / pose_name).string(),
                        pose_to_json(v.pose, v.intrinsics).dump(2) + "\n");
        rec.views.push_back(std::move(fv));
    }
    return rec;
}

// Generates, renders and writes train_count + test_count frames plus the
// manifest. Returns the records with absolute paths.
inline std::vector<FrameRecord> write_toy_dataset(const ToySceneConfig& cfg,
                                                  const std::string& root, int train_count,
                                                  int test_count) {
    cfg.validate();
    fs::create_directories(root);
    std::vector<FrameRecord> records;
    std::string manifest;
    for (int index = 0; index < train_count + test_count; ++index) {
        ToyScene scene = generate_toy_scene(cfg, index);
        render_toy_views(scene);
        std::string split = index < train_count ? "train" : "test";
        FrameRecord rec = write_toy_frame(scene, root, split);
        json views = json::array();
        for (std::size_t i = 0; i < rec.views.size(); ++i) {
            char img_name[64], pose_name[64];
            std::snprintf(img_name, sizeof(img_name), "frames/%s/view_%02zu.png",
                          rec.frame_id.c_str(), i);
            std::snprintf(pose_name, sizeof(pose_name), "frames/%s/view_%02zu.json",
                          rec.frame_id.c_str(), i);
            views.push_back({{"view_id", rec.views[i].view_id},
                             {"image", img_name},
                             {"pose", pose_name}});
        }
        rec.object_label = primitive_family_name(scene.family);
        json line = {{"frame_id", rec.frame_id},
                     {"split", split},
                     {"object_label", rec.object_label},
                     {"hand_mesh", "frames/" + rec.frame_id + "/hand.obj"},
                     {"object_mesh", "frames/" + rec.frame_id + "/object.obj"},
                     {"views", views}};
        manifest += line.dump() + "\n";
        records.push_back(std::move(rec));
    }
    write_text_file((fs::path(root) / "manifest.jsonl").string(), manifest);
    json meta = toy_config_to_json(cfg);
    meta["train_count"] = train_count;
    meta["test_count"] = test_count;
    write_text_file((fs::path(root) / "dataset.json").string(), meta.dump(2) + "\n");
    return records;
}

}  // namespace svho
