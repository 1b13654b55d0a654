#pragma once

// Evaluation protocol: seeded view-subset ablations over held-out frames,
// aggregated as mean/std across repetitions, written out as JSON, CSV tables
// and plot-data CSVs.

#include "svho/fusion.hpp"
#include "svho/metrics.hpp"

namespace svho {

struct EvalRunConfig {
    std::vector<int> view_counts{1, 2, 4, 8};
    int repetitions = 6;
    std::uint64_t seed = 19;
    MetricConfig metrics;

    void validate() const {
        if (view_counts.empty()) throw std::runtime_error("view_counts must not be empty");
        for (int v : view_counts)
            if (v < 1) throw std::runtime_error("view counts must be >= 1");
        if (repetitions < 1) throw std::runtime_error("repetitions must be >= 1");
        metrics.validate();
    }
};

// One held-out frame with everything evaluation needs: posed images, ground
// truth meshes in the canonical frame, and the autoencoder codes of the
// ground truth (the target the predictor was trained toward).
struct EvalFrame {
    std::string frame_id;
    std::string object_label;
    std::vector<CameraView> views;
    Mesh hand_gt, object_gt;
    LatentCube hand_codes_gt, object_codes_gt;
};

struct FrameEvalRow {
    std::string frame_id, object_label;
    int view_count = 0, repetition = 0;
    std::vector<int> view_ids;
    bool hand_failed = false, object_failed = false;
    double cd_h = 0.0, cd_o = 0.0;       // cm^2
    std::vector<double> fs_h, fs_o;      // one per threshold
    double cell_acc_h = 0.0, cell_acc_o = 0.0;
};

// Mean over frames for one (view_count, repetition); failed reconstructions
// are excluded from the means and counted instead.
struct RepetitionRow {
    int view_count = 0, repetition = 0;
    int frames = 0, hand_failures = 0, object_failures = 0;
    double cd_h = 0.0, cd_o = 0.0;
    std::vector<double> fs_h, fs_o;
    double cell_acc_h = 0.0, cell_acc_o = 0.0;
};

struct ViewCountAggregate {
    int view_count = 0;
    double cd_h_mean = 0.0, cd_h_std = 0.0, cd_o_mean = 0.0, cd_o_std = 0.0;
    std::vector<double> fs_h_mean, fs_h_std, fs_o_mean, fs_o_std;
    double cell_acc_h_mean = 0.0, cell_acc_o_mean = 0.0;
    int hand_failures = 0, object_failures = 0;
};

struct EvalReport {
    EvalRunConfig cfg;
    std::vector<FrameEvalRow> frames;
    std::vector<RepetitionRow> repetitions;
    std::vector<ViewCountAggregate> aggregates;
};

namespace eval_detail {

inline bool mesh_empty(const Mesh& m) { return m.vertices.empty() || m.triangles.empty(); }

inline double index_agreement(const LatentCube& a, const LatentCube& b) {
    if (a.indices.size() != b.indices.size())
        throw std::runtime_error("latent cube size mismatch in accuracy computation");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.indices.size(); ++i)
        if (a.indices[i] == b.indices[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(a.indices.size());
}

// sample std-dev across repetition means; a single repetition has no spread
inline double std_dev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double m = 0.0;
    for (double x : xs) m += x;
    return m / static_cast<double>(xs.size());
}

}  // namespace eval_detail

// Runs the full ablation: for every view count and repetition, a seeded view
// subset per frame, reconstruction, metrics against ground truth, and
// mean/std aggregation across repetitions.
inline EvalReport evaluate_run(const std::vector<EvalFrame>& frames, const Predictor& predictor,
                               const VqVae& hand_ae, const VqVae& object_ae,
                               const EvalRunConfig& cfg) {
    cfg.validate();
    if (frames.empty()) throw std::runtime_error("no frames to evaluate");
    for (const auto& f : frames)
        for (int vc : cfg.view_counts)
            if (static_cast<std::size_t>(vc) > f.views.size())
                throw std::runtime_error("frame " + f.frame_id + " has only " +
                                         std::to_string(f.views.size()) +
                                         " views, cannot evaluate " + std::to_string(vc));

    const std::size_t n_fs_h = cfg.metrics.f_thresholds_hand.size();
    const std::size_t n_fs_o = cfg.metrics.f_thresholds_object.size();

    EvalReport report;
    report.cfg = cfg;
    for (int vc : cfg.view_counts) {
        std::vector<RepetitionRow> reps;
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
            RepetitionRow rrow;
            rrow.view_count = vc;
            rrow.repetition = rep;
            rrow.fs_h.assign(n_fs_h, 0.0);
            rrow.fs_o.assign(n_fs_o, 0.0);
            int hand_ok = 0, object_ok = 0;
            double acc_h_sum = 0.0, acc_o_sum = 0.0;

            for (const EvalFrame& frame : frames) {
                Rng rng(cfg.seed ^ fnv1a64(frame.frame_id),
                        0xe7a10000u + static_cast<std::uint64_t>(vc) * 256u +
                            static_cast<std::uint64_t>(rep));
                std::vector<int> picked =
                    rng.sample_without_replacement(static_cast<int>(frame.views.size()), vc);
                std::vector<int> ids;
                ids.reserve(picked.size());
                for (int i : picked) ids.push_back(frame.views[static_cast<std::size_t>(i)].view_id);

                ViewSet vs;
                vs.views = frame.views;
                vs.selected = ids;
                ReconstructionResult rr = reconstruct(vs, predictor, hand_ae, object_ae);

                FrameEvalRow row;
                row.frame_id = frame.frame_id;
                row.object_label = frame.object_label;
                row.view_count = vc;
                row.repetition = rep;
                row.view_ids = rr.used_view_ids;
                row.cell_acc_h = eval_detail::index_agreement(rr.hand.z_hat, frame.hand_codes_gt);
                row.cell_acc_o =
                    eval_detail::index_agreement(rr.object.z_hat, frame.object_codes_gt);
                acc_h_sum += row.cell_acc_h;
                acc_o_sum += row.cell_acc_o;

                row.hand_failed = eval_detail::mesh_empty(rr.hand_mesh);
                if (!row.hand_failed) {
                    row.cd_h = chamfer_distance(rr.hand_mesh, frame.hand_gt, cfg.metrics);
                    for (std::size_t t = 0; t < n_fs_h; ++t)
                        row.fs_h.push_back(f_score(rr.hand_mesh, frame.hand_gt,
                                                   cfg.metrics.f_thresholds_hand[t],
                                                   cfg.metrics));
                    rrow.cd_h += row.cd_h;
                    for (std::size_t t = 0; t < n_fs_h; ++t) rrow.fs_h[t] += row.fs_h[t];
                    ++hand_ok;
                } else {
                    row.fs_h.assign(n_fs_h, 0.0);
                    ++rrow.hand_failures;
                }
                row.object_failed = eval_detail::mesh_empty(rr.object_mesh);
                if (!row.object_failed) {
                    row.cd_o = chamfer_distance(rr.object_mesh, frame.object_gt, cfg.metrics);
                    for (std::size_t t = 0; t < n_fs_o; ++t)
                        row.fs_o.push_back(f_score(rr.object_mesh, frame.object_gt,
                                                   cfg.metrics.f_thresholds_object[t],
                                                   cfg.metrics));
                    rrow.cd_o += row.cd_o;
                    for (std::size_t t = 0; t < n_fs_o; ++t) rrow.fs_o[t] += row.fs_o[t];
                    ++object_ok;
                } else {
                    row.fs_o.assign(n_fs_o, 0.0);
                    ++rrow.object_failures;
                }
                report.frames.push_back(std::move(row));
            }

            rrow.frames = static_cast<int>(frames.size());
            if (hand_ok > 0) {
                rrow.cd_h /= hand_ok;
                for (auto& v : rrow.fs_h) v /= hand_ok;
            }
            if (object_ok > 0) {
                rrow.cd_o /= object_ok;
                for (auto& v : rrow.fs_o) v /= object_ok;
            }
            rrow.cell_acc_h = acc_h_sum / static_cast<double>(frames.size());
            rrow.cell_acc_o = acc_o_sum / static_cast<double>(frames.size());
            reps.push_back(rrow);
            report.repetitions.push_back(std::move(rrow));
        }

        ViewCountAggregate agg;
        agg.view_count = vc;
        std::vector<double> cds_h, cds_o, accs_h, accs_o;
        std::vector<std::vector<double>> fss_h(n_fs_h), fss_o(n_fs_o);
        for (const auto& r : reps) {
            cds_h.push_back(r.cd_h);
            cds_o.push_back(r.cd_o);
            accs_h.push_back(r.cell_acc_h);
            accs_o.push_back(r.cell_acc_o);
            for (std::size_t t = 0; t < n_fs_h; ++t) fss_h[t].push_back(r.fs_h[t]);
            for (std::size_t t = 0; t < n_fs_o; ++t) fss_o[t].push_back(r.fs_o[t]);
            agg.hand_failures += r.hand_failures;
            agg.object_failures += r.object_failures;
        }
        agg.cd_h_mean = eval_detail::mean_of(cds_h);
        agg.cd_h_std = eval_detail::std_dev(cds_h);
        agg.cd_o_mean = eval_detail::mean_of(cds_o);
        agg.cd_o_std = eval_detail::std_dev(cds_o);
        agg.cell_acc_h_mean = eval_detail::mean_of(accs_h);
        agg.cell_acc_o_mean = eval_detail::mean_of(accs_o);
        for (std::size_t t = 0; t < n_fs_h; ++t) {
            agg.fs_h_mean.push_back(eval_detail::mean_of(fss_h[t]));
            agg.fs_h_std.push_back(eval_detail::std_dev(fss_h[t]));
        }
        for (std::size_t t = 0; t < n_fs_o; ++t) {
            agg.fs_o_mean.push_back(eval_detail::mean_of(fss_o[t]));
            agg.fs_o_std.push_back(eval_detail::std_dev(fss_o[t]));
        }
        report.aggregates.push_back(std::move(agg));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization. Column layouts are documented in the README.

namespace eval_detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string mm_label(double meters) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", meters * 1000.0);
    return buf;
}

}  // namespace eval_detail

inline json eval_report_to_json(const EvalReport& r) {
    json j;
    j["config"] = {{"view_counts", r.cfg.view_counts},
                   {"repetitions", r.cfg.repetitions},
                   {"seed", r.cfg.seed},
                   {"n_samples", r.cfg.metrics.n_samples},
                   {"f_thresholds_hand", r.cfg.metrics.f_thresholds_hand},
                   {"f_thresholds_object", r.cfg.metrics.f_thresholds_object},
                   {"metric_seed", r.cfg.metrics.seed}};
    j["frames"] = json::array();
    for (const auto& f : r.frames)
        j["frames"].push_back({{"frame_id", f.frame_id},
                               {"object_label", f.object_label},
                               {"view_count", f.view_count},
                               {"repetition", f.repetition},
                               {"view_ids", f.view_ids},
                               {"hand_failed", f.hand_failed},
                               {"object_failed", f.object_failed},
                               {"cd_h_cm2", f.cd_h},
                               {"cd_o_cm2", f.cd_o},
                               {"fs_h", f.fs_h},
                               {"fs_o", f.fs_o},
                               {"cell_acc_h", f.cell_acc_h},
                               {"cell_acc_o", f.cell_acc_o}});
    j["repetitions"] = json::array();
    for (const auto& p : r.repetitions)
        j["repetitions"].push_back({{"view_count", p.view_count},
                                    {"repetition", p.repetition},
                                    {"frames", p.frames},
                                    {"hand_failures", p.hand_failures},
                                    {"object_failures", p.object_failures},
                                    {"cd_h_cm2", p.cd_h},
                                    {"cd_o_cm2", p.cd_o},
                                    {"fs_h", p.fs_h},
                                    {"fs_o", p.fs_o},
                                    {"cell_acc_h", p.cell_acc_h},
                                    {"cell_acc_o", p.cell_acc_o}});
    j["aggregates"] = json::array();
    for (const auto& a : r.aggregates)
        j["aggregates"].push_back({{"view_count", a.view_count},
                                   {"cd_h_mean", a.cd_h_mean},
                                   {"cd_h_std", a.cd_h_std},
                                   {"cd_o_mean", a.cd_o_mean},
                                   {"cd_o_std", a.cd_o_std},
                                   {"fs_h_mean", a.fs_h_mean},
                                   {"fs_h_std", a.fs_h_std},
                                   {"fs_o_mean", a.fs_o_mean},
                                   {"fs_o_std", a.fs_o_std},
                                   {"cell_acc_h_mean", a.cell_acc_h_mean},
                                   {"cell_acc_o_mean", a.cell_acc_o_mean},
                                   {"hand_failures", a.hand_failures},
                                   {"object_failures", a.object_failures}});
    return j;
}

// frames.csv / repetitions.csv / summary.csv plus plot-data CSVs
// (fscore_vs_views.csv, perobj.csv). Returns the file paths written.
inline std::vector<std::string> write_eval_report(const EvalReport& r, const fs::path& dir) {
    using eval_detail::fmt;
    using eval_detail::mm_label;
    fs::create_directories(dir);
    std::vector<std::string> written;

    auto fs_header = [&](const char* prefix, const std::vector<double>& taus,
                         const char* suffix) {
        std::string h;
        for (double t : taus) h += "," + std::string(prefix) + mm_label(t) + "mm" + suffix;
        return h;
    };

    {
        fs::path p = dir / "report.json";
        write_text_file(p.string(), eval_report_to_json(r).dump(2) + "\n");
        written.push_back(p.string());
    }
    {
        std::string csv = "frame_id,object_label,view_count,repetition,view_ids,hand_failed,"
                          "object_failed,cd_h_cm2,cd_o_cm2";
        csv += fs_header("fs_h@", r.cfg.metrics.f_thresholds_hand, "");
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "");
        csv += ",cell_acc_h,cell_acc_o\n";
        for (const auto& f : r.frames) {
            std::string ids;
            for (std::size_t i = 0; i < f.view_ids.size(); ++i)
                ids += (i ? ";" : "") + std::to_string(f.view_ids[i]);
            csv += f.frame_id + "," + f.object_label + "," + std::to_string(f.view_count) + "," +
                   std::to_string(f.repetition) + "," + ids + "," +
                   (f.hand_failed ? "1" : "0") + "," + (f.object_failed ? "1" : "0") + "," +
                   fmt(f.cd_h) + "," + fmt(f.cd_o);
            for (double v : f.fs_h) csv += "," + fmt(v);
            for (double v : f.fs_o) csv += "," + fmt(v);
            csv += "," + fmt(f.cell_acc_h) + "," + fmt(f.cell_acc_o) + "\n";
        }
        fs::path p = dir / "frames.csv";
        write_text_file(p.string(), csv);
        written.push_back(p.string());
    }
    {
        std::string csv =
            "view_count,repetition,frames,hand_failures,object_failures,cd_h_cm2,cd_o_cm2";
        csv += fs_header("fs_h@", r.cfg.metrics.f_thresholds_hand, "");
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "");
        csv += ",cell_acc_h,cell_acc_o\n";
        for (const auto& p2 : r.repetitions) {
            csv += std::to_string(p2.view_count) + "," + std::to_string(p2.repetition) + "," +
                   std::to_string(p2.frames) + "," + std::to_string(p2.hand_failures) + "," +
                   std::to_string(p2.object_failures) + "," + fmt(p2.cd_h) + "," + fmt(p2.cd_o);
            for (double v : p2.fs_h) csv += "," + fmt(v);
            for (double v : p2.fs_o) csv += "," + fmt(v);
            csv += "," + fmt(p2.cell_acc_h) + "," + fmt(p2.cell_acc_o) + "\n";
        }
        fs::path p = dir / "repetitions.csv";
        write_text_file(p.string(), csv);
        written.push_back(p.string());
    }
    {
        std::string csv = "view_count,cd_h_mean,cd_h_std,cd_o_mean,cd_o_std";
        csv += fs_header("fs_h@", r.cfg.metrics.f_thresholds_hand, "_mean");
        csv += fs_header("fs_h@", r.cfg.metrics.f_thresholds_hand, "_std");
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "_mean");
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "_std");
        csv += ",cell_acc_h,cell_acc_o,hand_failures,object_failures\n";
        for (const auto& a : r.aggregates) {
            csv += std::to_string(a.view_count) + "," + fmt(a.cd_h_mean) + "," +
                   fmt(a.cd_h_std) + "," + fmt(a.cd_o_mean) + "," + fmt(a.cd_o_std);
            for (double v : a.fs_h_mean) csv += "," + fmt(v);
            for (double v : a.fs_h_std) csv += "," + fmt(v);
            for (double v : a.fs_o_mean) csv += "," + fmt(v);
            for (double v : a.fs_o_std) csv += "," + fmt(v);
            csv += "," + fmt(a.cell_acc_h_mean) + "," + fmt(a.cell_acc_o_mean) + "," +
                   std::to_string(a.hand_failures) + "," + std::to_string(a.object_failures) +
                   "\n";
        }
        fs::path p = dir / "summary.csv";
        write_text_file(p.string(), csv);
        written.push_back(p.string());
    }
    {
        // plot data: one line per view count, mean±std per threshold
        std::string csv = "view_count";
        csv += fs_header("fs_h@", r.cfg.metrics.f_thresholds_hand, "_mean");
        csv += fs_header("fs_h@", r.cfg.metrics.f_thresholds_hand, "_std");
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "_mean");
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "_std");
        csv += "\n";
        for (const auto& a : r.aggregates) {
            csv += std::to_string(a.view_count);
            for (double v : a.fs_h_mean) csv += "," + fmt(v);
            for (double v : a.fs_h_std) csv += "," + fmt(v);
            for (double v : a.fs_o_mean) csv += "," + fmt(v);
            for (double v : a.fs_o_std) csv += "," + fmt(v);
            csv += "\n";
        }
        fs::path p = dir / "fscore_vs_views.csv";
        write_text_file(p.string(), csv);
        written.push_back(p.string());
    }
    {
        // per-object-label breakdown across all repetitions
        std::map<std::string, std::map<int, std::vector<const FrameEvalRow*>>> grouped;
        for (const auto& f : r.frames) grouped[f.object_label][f.view_count].push_back(&f);
        std::string csv = "object_label,view_count,rows,object_failures,cd_o_mean";
        csv += fs_header("fs_o@", r.cfg.metrics.f_thresholds_object, "_mean");
        csv += "\n";
        for (const auto& [label, by_vc] : grouped)
            for (const auto& [vc, rows] : by_vc) {
                int ok = 0, failures = 0;
                double cd = 0.0;
                std::vector<double> fs(r.cfg.metrics.f_thresholds_object.size(), 0.0);
                for (const FrameEvalRow* f : rows) {
                    if (f->object_failed) {
                        ++failures;
                        continue;
                    }
                    ++ok;
                    cd += f->cd_o;
                    for (std::size_t t = 0; t < fs.size(); ++t) fs[t] += f->fs_o[t];
                }
                if (ok > 0) {
                    cd /= ok;
                    for (auto& v : fs) v /= ok;
                }
                csv += label + "," + std::to_string(vc) + "," + std::to_string(rows.size()) +
                       "," + std::to_string(failures) + "," + fmt(cd);
                for (double v : fs) csv += "," + fmt(v);
                csv += "\n";
            }
        fs::path p = dir / "perobj.csv";
        write_text_file(p.string(), csv);
        written.push_back(p.string());
    }
    return written;
}

}  // namespace svho
