#pragma once

// Multi-view fusion: average per-view probability cubes, pick the most
// probable code per cell, and decode the resulting latent cubes to hand and
// object meshes.

#include <limits>
#include <set>

#include "svho/marching_cubes.hpp"
#include "svho/predictor.hpp"

namespace svho {

// The cameras observing one frame plus the subset actually used.
struct ViewSet {
    std::vector<CameraView> views;
    std::vector<int> selected;  // view ids, subset of views

    const CameraView& view_by_id(int id) const {
        for (const auto& v : views)
            if (v.view_id == id) return v;
        throw std::runtime_error("selected view id " + std::to_string(id) +
                                 " not present in view set");
    }

    void validate() const {
        if (selected.empty()) throw std::runtime_error("no views selected");
        std::set<int> ids;
        for (const auto& v : views)
            if (!ids.insert(v.view_id).second)
                throw std::runtime_error("duplicate view id " + std::to_string(v.view_id));
        for (int id : selected)
            if (!ids.count(id))
                throw std::runtime_error("selected view id " + std::to_string(id) +
                                         " not present in view set");
    }
};

// Elementwise arithmetic mean of the per-view cubes. Views are summed in
// ascending view-id order so any input permutation produces bit-identical
// output.
inline ViewProbabilities fuse(const std::vector<ViewProbabilities>& per_view) {
    if (per_view.empty()) throw std::runtime_error("cannot fuse an empty view list");
    const ViewProbabilities& first = per_view.front();
    for (const auto& vp : per_view) {
        if (vp.k != first.k) throw std::runtime_error("mismatched codebook size in fuse");
        if (vp.cells_per_axis != first.cells_per_axis)
            throw std::runtime_error("mismatched cube resolution in fuse");
        if (vp.shape_class != first.shape_class)
            throw std::runtime_error("mismatched shape class in fuse");
    }
    std::vector<const ViewProbabilities*> order;
    order.reserve(per_view.size());
    for (const auto& vp : per_view) order.push_back(&vp);
    std::sort(order.begin(), order.end(), [](const ViewProbabilities* a,
                                             const ViewProbabilities* b) {
        return a->view_id < b->view_id;
    });

    ViewProbabilities out = first;
    out.view_id = -1;  // fused cube belongs to no single view
    std::vector<double> acc(first.probs.size(), 0.0);
    for (const ViewProbabilities* vp : order)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += vp->probs[i];
    double inv = 1.0 / static_cast<double>(per_view.size());
    for (std::size_t i = 0; i < acc.size(); ++i)
        out.probs[i] = static_cast<float>(acc[i] * inv);
    return out;
}

// Cellwise argmax; ties resolve to the smallest index.
inline LatentCube select_indices(const ViewProbabilities& p) {
    LatentCube cube(p.cells_per_axis, p.k);
    for (std::size_t c = 0; c < p.cell_count(); ++c) {
        const float* row = p.cell(c);
        int best = 0;
        for (int j = 1; j < p.k; ++j)
            if (row[j] > row[best]) best = j;
        cube.indices[c] = static_cast<std::uint16_t>(best);
    }
    return cube;
}

struct FusedPrediction {
    ViewProbabilities probs;
    LatentCube z_hat;
    ShapeClass shape_class = ShapeClass::kHand;
};

inline FusedPrediction make_fused_prediction(const std::vector<ViewProbabilities>& per_view) {
    FusedPrediction out;
    out.probs = fuse(per_view);
    out.z_hat = select_indices(out.probs);
    out.shape_class = out.probs.shape_class;
    return out;
}

struct EntropySummary {
    double mean = 0.0, min = 0.0, max = 0.0;
};

// Per-cell Shannon entropy of the fused distribution, in nats.
inline EntropySummary entropy_summary(const ViewProbabilities& p) {
    EntropySummary s;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (std::size_t c = 0; c < p.cell_count(); ++c) {
        const float* row = p.cell(c);
        double h = 0.0;
        for (int j = 0; j < p.k; ++j)
            if (row[j] > 0.0f) h -= row[j] * std::log(static_cast<double>(row[j]));
        total += h;
        s.min = std::min(s.min, h);
        s.max = std::max(s.max, h);
    }
    s.mean = total / static_cast<double>(p.cell_count());
    return s;
}

struct ReconstructionResult {
    Mesh hand_mesh;
    Mesh object_mesh;
    FusedPrediction hand;
    FusedPrediction object;
    std::vector<int> used_view_ids;  // ascending
};

// Full decode path: per-view prediction, fusion, index selection, codebook
// lookup and marching cubes at the zero level set. Output meshes live in the
// canonical wrist frame.
inline ReconstructionResult reconstruct(const ViewSet& views, const Predictor& predictor,
                                        const VqVae& hand_ae, const VqVae& object_ae) {
    views.validate();
    if (hand_ae.cfg.codebook_size != predictor.cfg.k_hand ||
        object_ae.cfg.codebook_size != predictor.cfg.k_object)
        throw std::runtime_error("codebook size mismatch between predictor and autoencoders");
    if (hand_ae.cells_per_axis() != predictor.cfg.cells_per_axis ||
        object_ae.cells_per_axis() != predictor.cfg.cells_per_axis)
        throw std::runtime_error("latent resolution mismatch between predictor and autoencoders");

    std::vector<int> ids = views.selected;
    std::sort(ids.begin(), ids.end());

    std::vector<ViewProbabilities> hand_probs, object_probs;
    hand_probs.reserve(ids.size());
    object_probs.reserve(ids.size());
    for (int id : ids) {
        auto [h, o] = predictor.predict_both(views.view_by_id(id));
        hand_probs.push_back(std::move(h));
        object_probs.push_back(std::move(o));
    }

    ReconstructionResult out;
    out.used_view_ids = ids;
    out.hand = make_fused_prediction(hand_probs);
    out.object = make_fused_prediction(object_probs);

    TsdfGrid hand_grid = hand_ae.decode_codes(out.hand.z_hat);
    TsdfGrid object_grid = object_ae.decode_codes(out.object.z_hat);
    out.hand_mesh = extract_mesh(hand_grid, 0.0);
    out.object_mesh = extract_mesh(object_grid, 0.0);
    return out;
}

// OBJ meshes plus a sidecar describing which views produced them and how
// peaked the fused distributions were.
inline json reconstruction_sidecar(const ReconstructionResult& r) {
    auto entropy_json = [](const EntropySummary& s) {
        return json{{"mean", s.mean}, {"min", s.min}, {"max", s.max}};
    };
    return {{"view_ids", r.used_view_ids},
            {"hand",
             {{"shape_class", shape_class_name(r.hand.shape_class)},
              {"entropy", entropy_json(entropy_summary(r.hand.probs))},
              {"vertices", r.hand_mesh.vertices.size()},
              {"triangles", r.hand_mesh.triangles.size()}}},
            {"object",
             {{"shape_class", shape_class_name(r.object.shape_class)},
              {"entropy", entropy_json(entropy_summary(r.object.probs))},
              {"vertices", r.object_mesh.vertices.size()},
              {"triangles", r.object_mesh.triangles.size()}}}};
}

inline void write_reconstruction(const ReconstructionResult& r, const fs::path& dir,
                                 const std::string& frame_id) {
    fs::create_directories(dir);
    write_obj(r.hand_mesh, (dir / (frame_id + "_hand.obj")).string());
    write_obj(r.object_mesh, (dir / (frame_id + "_object.obj")).string());
    json sidecar = reconstruction_sidecar(r);
    sidecar["frame_id"] = frame_id;
    write_text_file((dir / (frame_id + "_reconstruction.json")).string(), sidecar.dump(2) + "\n");
}

}  // namespace svho
