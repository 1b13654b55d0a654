#pragma once

// Reconstruction quality metrics: hand-pose alignment, Chamfer distance in
// cm^2 and F-score at length thresholds, over area-weighted surface samples.

#include "svho/camera.hpp"
#include "svho/mesh.hpp"

namespace svho {

struct MetricConfig {
    int n_samples = 30000;
    std::vector<double> f_thresholds_hand{0.001, 0.005};    // meters (1 mm, 5 mm)
    std::vector<double> f_thresholds_object{0.005, 0.010};  // meters (5 mm, 10 mm)
    std::uint64_t seed = 7;

    void validate() const {
        if (n_samples <= 0) throw std::runtime_error("n_samples must be positive");
        for (double t : f_thresholds_hand)
            if (t <= 0) throw std::runtime_error("thresholds must be positive");
        for (double t : f_thresholds_object)
            if (t <= 0) throw std::runtime_error("thresholds must be positive");
    }
};

// Exact nearest-neighbor queries over a fixed point set (median-split kd-tree).
class KdTree3 {
public:
    explicit KdTree3(std::vector<Vec3> points) : pts_(std::move(points)) {
        if (pts_.empty()) throw std::runtime_error("kd-tree needs at least one point");
        order_.resize(pts_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        nodes_.reserve(2 * pts_.size());
        build(0, static_cast<int>(pts_.size()));
    }

    // Squared distance to the nearest stored point.
    double nearest2(const Vec3& q) const {
        double best = 1e30;
        search(0, q, best);
        return best;
    }

private:
    struct Node {
        double split = 0.0;
        int axis = -1;           // -1 marks a leaf
        int left = -1, right = -1;
        int begin = 0, end = 0;
    };

    int build(int begin, int end) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back({});
        if (end - begin <= 8) {
            nodes_[id].begin = begin;
            nodes_[id].end = end;
            return id;
        }
        Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
        for (int i = begin; i < end; ++i) {
            lo = min3(lo, pts_[order_[i]]);
            hi = max3(hi, pts_[order_[i]]);
        }
        Vec3 ext = hi - lo;
        int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
        int mid = (begin + end) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
        nodes_[id].axis = axis;
        nodes_[id].split = pts_[order_[mid]][axis];
        int l = build(begin, mid);
        int r = build(mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    void search(int id, const Vec3& q, double& best) const {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (int i = n.begin; i < n.end; ++i)
                best = std::min(best, (pts_[order_[i]] - q).norm2());
            return;
        }
        double delta = q[n.axis] - n.split;
        int near = delta < 0 ? n.left : n.right;
        int far = delta < 0 ? n.right : n.left;
        search(near, q, best);
        if (delta * delta < best) search(far, q, best);
    }

    std::vector<Vec3> pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

// Expresses both meshes in the hand-wrist frame: the prediction is already
// canonical and passes through; the ground truth is mapped from the camera
// frame with the global hand pose.
inline std::pair<Mesh, Mesh> align_with_hand_pose(const Mesh& pred, const Mesh& gt,
                                                  const HandPose& pose) {
    Mesh gt_aligned = gt.transformed(pose.rotation, pose.translation);
    return {pred, gt_aligned};
}

namespace metric_detail {

inline std::pair<std::vector<Vec3>, std::vector<Vec3>> sample_pair(const Mesh& a, const Mesh& b,
                                                                   const MetricConfig& cfg) {
    cfg.validate();
    if (a.empty() || b.empty()) throw std::runtime_error("empty mesh in metric computation");
    // Both sides draw from the same seed: identical meshes then yield
    // identical sample sets, so self-distance is exactly zero.
    return {sample_surface_points(a, cfg.n_samples, cfg.seed),
            sample_surface_points(b, cfg.n_samples, cfg.seed)};
}

}  // namespace metric_detail

// Symmetric mean of squared nearest-sample distances, reported in cm^2.
inline double chamfer_distance(const Mesh& a, const Mesh& b, const MetricConfig& cfg) {
    auto [pa, pb] = metric_detail::sample_pair(a, b, cfg);
    KdTree3 tree_a(pa), tree_b(pb);

    std::vector<double> d2_ab(pa.size()), d2_ba(pb.size());
    parallel_for(pa.size(), [&](std::size_t i) { d2_ab[i] = tree_b.nearest2(pa[i]); });
    parallel_for(pb.size(), [&](std::size_t i) { d2_ba[i] = tree_a.nearest2(pb[i]); });

    double sum_ab = 0.0, sum_ba = 0.0;
    for (double d : d2_ab) sum_ab += d;
    for (double d : d2_ba) sum_ba += d;
    // meters^2 -> cm^2
    return (sum_ab / pa.size() + sum_ba / pb.size()) * 1e4;
}

// F = 2PR/(P+R) with precision/recall = fraction of samples within tau
// (meters) of the other sample set; 0 when P+R = 0.
inline double f_score(const Mesh& a, const Mesh& b, double tau, const MetricConfig& cfg) {
    if (tau <= 0) throw std::runtime_error("threshold must be positive");
    auto [pa, pb] = metric_detail::sample_pair(a, b, cfg);
    KdTree3 tree_a(pa), tree_b(pb);

    double tau2 = tau * tau;
    std::vector<std::uint8_t> hit_a(pa.size()), hit_b(pb.size());
    parallel_for(pa.size(), [&](std::size_t i) { hit_a[i] = tree_b.nearest2(pa[i]) <= tau2; });
    parallel_for(pb.size(), [&](std::size_t i) { hit_b[i] = tree_a.nearest2(pb[i]) <= tau2; });

    double precision = 0.0, recall = 0.0;
    for (auto h : hit_a) precision += h;
    for (auto h : hit_b) recall += h;
    precision /= pa.size();
    recall /= pb.size();
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace svho
