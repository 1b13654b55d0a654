#pragma once

// Single-view code predictor: a residual 2D backbone encodes the image, the
// 8^3 latent-cell centers gather pixel-aligned features through the camera,
// and per-shape 3D-convolutional classifier heads emit codebook-index
// probabilities for every cell. Trained with weighted cross-entropy against
// latent cubes extracted by the autoencoders.

#include <map>

#include "svho/autoencoder.hpp"
#include "svho/camera.hpp"
#include "svho/checkpoint.hpp"
#include "svho/codebook.hpp"
#include "svho/nn.hpp"

namespace svho {

enum class ShapeClass { kHand, kObject };

inline const char* shape_class_name(ShapeClass c) {
    return c == ShapeClass::kHand ? "hand" : "object";
}

// Per-cell codebook-index distribution for one view; rows are cells in
// (i,j,k) row-major order (k fastest), each row of length K summing to 1.
struct ViewProbabilities {
    int cells_per_axis = 8;
    int k = 0;
    ShapeClass shape_class = ShapeClass::kHand;
    int view_id = 0;
    std::vector<float> probs;  // [cells, K]

    std::size_t cell_count() const {
        return static_cast<std::size_t>(cells_per_axis) * cells_per_axis * cells_per_axis;
    }

    const float* cell(std::size_t c) const { return &probs[c * k]; }

    void validate() const {
        if (probs.size() != cell_count() * static_cast<std::size_t>(k))
            throw std::runtime_error("probability cube has wrong element count");
        for (std::size_t c = 0; c < cell_count(); ++c) {
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                float p = probs[c * k + j];
                if (p < 0.0f) throw std::runtime_error("negative probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-5)
                throw std::runtime_error("cell probabilities do not sum to 1");
        }
    }
};

struct ClassWeights {
    int empty_index = 0;
    double empty_weight = 0.25;
    double other_weight = 0.75;

    double weight_for(int index) const {
        return index == empty_index ? empty_weight : other_weight;
    }

    void validate(int k) const {
        if (empty_index < 0 || empty_index >= k)
            throw std::runtime_error("empty_index outside codebook range");
        if (empty_weight <= 0.0 || other_weight <= 0.0)
            throw std::runtime_error("class weights must be positive");
    }
};

// The code an all-empty volume maps to. Encodes an all +truncation grid and
// requires the resulting cube to be constant; a mixed cube means the
// autoencoder has no unambiguous empty-space code.
inline int identify_empty_index(const VqVae& model) {
    TsdfGrid empty(model.cfg.grid);  // initialized to +truncation everywhere
    std::vector<float> cube = model.encode_grid_latent(empty);
    std::size_t cells = model.cell_count();
    int v = model.cfg.latent_dim;
    std::vector<float> z(v);
    std::map<int, long> histogram;
    for (std::size_t c = 0; c < cells; ++c) {
        for (int i = 0; i < v; ++i) z[i] = cube[static_cast<std::size_t>(i) * cells + c];
        ++histogram[model.book.nearest(z.data())];
    }
    if (histogram.size() != 1) {
        std::string msg = "empty-space code is ambiguous; index histogram:";
        for (const auto& [idx, count] : histogram)
            msg += " " + std::to_string(idx) + ":" + std::to_string(count);
        throw std::runtime_error(msg);
    }
    return histogram.begin()->first;
}

// ---------------------------------------------------------------------------
// Weighted cross-entropy (the oracle-facing form, on probabilities).

inline double weighted_cross_entropy(const ViewProbabilities& probs, const LatentCube& target,
                                     const ClassWeights& w) {
    if (probs.cells_per_axis != target.cells_per_axis || probs.k != target.codebook_size)
        throw std::runtime_error("probability cube and target cube shapes disagree");
    w.validate(probs.k);
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < probs.cell_count(); ++c) {
        int y = target.indices[c];
        if (y >= probs.k) throw std::runtime_error("target index out of range");
        double wy = w.weight_for(y);
        double p = std::max(static_cast<double>(probs.probs[c * probs.k + y]), 1e-30);
        num += wy * -std::log(p);
        den += wy;
    }
    return den > 0.0 ? num / den : 0.0;
}

// Fused log-softmax form used in training; same value as the oracle form.
// When dlogits is given, accumulates grad_scale * dL/dlogits into it.
inline double weighted_cross_entropy_logits(const std::vector<float>& logit_rows,
                                            const std::vector<std::uint16_t>& targets,
                                            int n, int k, const ClassWeights& w,
                                            std::vector<float>* dlogits = nullptr,
                                            double grad_scale = 1.0) {
    std::vector<float> probs = nn::softmax_rows(logit_rows, n, k);
    double den = 0.0;
    for (int i = 0; i < n; ++i) den += w.weight_for(targets[i]);
    if (den <= 0.0) return 0.0;
    double num = 0.0;
    for (int i = 0; i < n; ++i) {
        int y = targets[i];
        double wy = w.weight_for(y);
        double p = std::max(static_cast<double>(probs[static_cast<std::size_t>(i) * k + y]),
                            1e-30);
        num += wy * -std::log(p);
        if (dlogits) {
            double scale = grad_scale * wy / den;
            for (int j = 0; j < k; ++j) {
                double g = probs[static_cast<std::size_t>(i) * k + j] - (j == y ? 1.0 : 0.0);
                (*dlogits)[static_cast<std::size_t>(i) * k + j] +=
                    static_cast<float>(scale * g);
            }
        }
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// Backbone.

inline int pick_norm_groups(int channels) {
    for (int g : {8, 4, 2, 1})
        if (channels % g == 0) return g;
    return 1;
}

struct ResBlock2d {
    nn::Conv2d conv1, conv2;
    nn::GroupNorm gn1, gn2;
    nn::Conv2d skip;
    bool has_skip = false;
    int in_ch = 0, out_ch = 0, stride = 1;

    ResBlock2d() = default;
    ResBlock2d(const std::string& name, int in_c, int out_c, int s, Rng& rng)
        : conv1(name + ".conv1", in_c, out_c, 3, s, 1, rng),
          conv2(name + ".conv2", out_c, out_c, 3, 1, 1, rng),
          gn1(name + ".gn1", out_c, pick_norm_groups(out_c)),
          gn2(name + ".gn2", out_c, pick_norm_groups(out_c)),
          in_ch(in_c), out_ch(out_c), stride(s) {
        has_skip = (s != 1 || in_c != out_c);
        if (has_skip) skip = nn::Conv2d(name + ".skip", in_c, out_c, 1, s, 0, rng);
    }

    void collect(std::vector<nn::Param*>& out) {
        conv1.collect(out);
        conv2.collect(out);
        gn1.collect(out);
        gn2.collect(out);
        if (has_skip) skip.collect(out);
    }

    struct Cache {
        std::vector<float> cols1, relu1, cols2, skip_cols, out;
        nn::GroupNorm::Ctx g1, g2;
        int h_in = 0, w_in = 0, h_out = 0, w_out = 0;
    };

    std::vector<float> forward(const std::vector<float>& x, int h, int w,
                               Cache* cache = nullptr) const {
        int ho = conv1.out_size(h), wo = conv1.out_size(w);
        int units = ho * wo;
        std::vector<float> cols1;
        std::vector<float> y = conv1.forward(x, h, w, cache ? &cols1 : nullptr);
        nn::GroupNorm::Ctx g1;
        y = gn1.forward(y, units, cache ? &g1 : nullptr);
        nn::relu_inplace(y);
        std::vector<float> relu1 = cache ? y : std::vector<float>();
        std::vector<float> cols2;
        std::vector<float> m = conv2.forward(y, ho, wo, cache ? &cols2 : nullptr);
        nn::GroupNorm::Ctx g2;
        m = gn2.forward(m, units, cache ? &g2 : nullptr);

        std::vector<float> skip_cols;
        if (has_skip) {
            std::vector<float> sk = skip.forward(x, h, w, cache ? &skip_cols : nullptr);
            for (std::size_t i = 0; i < m.size(); ++i) m[i] += sk[i];
        } else {
            for (std::size_t i = 0; i < m.size(); ++i) m[i] += x[i];
        }
        nn::relu_inplace(m);
        if (cache) {
            cache->cols1 = std::move(cols1);
            cache->relu1 = std::move(relu1);
            cache->cols2 = std::move(cols2);
            cache->skip_cols = std::move(skip_cols);
            cache->out = m;
            cache->g1 = std::move(g1);
            cache->g2 = std::move(g2);
            cache->h_in = h;
            cache->w_in = w;
            cache->h_out = ho;
            cache->w_out = wo;
        }
        return m;
    }

    std::vector<float> backward(Cache& c, const std::vector<float>& dy) {
        std::vector<float> ds = nn::relu_backward(c.out, dy);
        // main branch
        std::vector<float> g = gn2.backward(c.g2, ds);
        g = conv2.backward(c.cols2, g, c.h_out, c.w_out);
        g = nn::relu_backward(c.relu1, g);
        g = gn1.backward(c.g1, g);
        std::vector<float> dx = conv1.backward(c.cols1, g, c.h_in, c.w_in);
        // shortcut
        if (has_skip) {
            std::vector<float> dsk = skip.backward(c.skip_cols, ds, c.h_in, c.w_in);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsk[i];
        } else {
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
        }
        return dx;
    }
};

// Stem + four two-block residual stages (strides 2,1,2,2,1 overall -> feature
// stride 8) + a 1x1 projection to the feature dimension. 18 weighted conv
// layers on the main path, like the usual 18-layer residual recipe.
struct Backbone {
    nn::Conv2d stem;
    nn::GroupNorm stem_gn;
    std::vector<ResBlock2d> blocks;
    nn::Conv2d proj;
    int feature_dim = 0;

    Backbone() = default;
    Backbone(int stem_width, const std::vector<int>& stage_widths, int f_dim, Rng& rng)
        : stem("backbone.stem", 3, stem_width, 3, 2, 1, rng),
          stem_gn("backbone.stem_gn", stem_width, pick_norm_groups(stem_width)),
          feature_dim(f_dim) {
        if (stage_widths.size() != 4)
            throw std::runtime_error("backbone expects exactly 4 stage widths");
        static constexpr int kStageStride[4] = {1, 2, 2, 1};
        int in_c = stem_width;
        for (int s = 0; s < 4; ++s) {
            for (int b = 0; b < 2; ++b) {
                int stride = b == 0 ? kStageStride[s] : 1;
                blocks.emplace_back("backbone.stage" + std::to_string(s) + ".block" +
                                        std::to_string(b),
                                    in_c, stage_widths[s], stride, rng);
                in_c = stage_widths[s];
            }
        }
        proj = nn::Conv2d("backbone.proj", in_c, f_dim, 1, 1, 0, rng);
    }

    void collect(std::vector<nn::Param*>& out) {
        stem.collect(out);
        stem_gn.collect(out);
        for (auto& b : blocks) b.collect(out);
        proj.collect(out);
    }

    struct Cache {
        std::vector<float> stem_cols, stem_out;
        nn::GroupNorm::Ctx stem_g;
        std::vector<ResBlock2d::Cache> blocks;
        std::vector<float> proj_cols;
        int h_in = 0, w_in = 0, h_stem = 0, w_stem = 0, h_f = 0, w_f = 0;
    };

    // Input: [3, H, W] planes; output: [F, h, w] planes.
    std::vector<float> forward(const std::vector<float>& planes, int h, int w,
                               Cache* cache = nullptr) const {
        int hs = stem.out_size(h), ws = stem.out_size(w);
        std::vector<float> stem_cols;
        std::vector<float> x = stem.forward(planes, h, w, cache ? &stem_cols : nullptr);
        nn::GroupNorm::Ctx stem_g;
        x = stem_gn.forward(x, hs * ws, cache ? &stem_g : nullptr);
        nn::relu_inplace(x);
        std::vector<float> stem_out = cache ? x : std::vector<float>();

        if (cache) cache->blocks.resize(blocks.size());
        int hc = hs, wc = ws;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            x = blocks[i].forward(x, hc, wc, cache ? &cache->blocks[i] : nullptr);
            hc = blocks[i].conv1.out_size(hc);
            wc = blocks[i].conv1.out_size(wc);
        }
        std::vector<float> proj_cols;
        x = proj.forward(x, hc, wc, cache ? &proj_cols : nullptr);
        if (cache) {
            cache->stem_cols = std::move(stem_cols);
            cache->stem_out = std::move(stem_out);
            cache->stem_g = std::move(stem_g);
            cache->proj_cols = std::move(proj_cols);
            cache->h_in = h;
            cache->w_in = w;
            cache->h_stem = hs;
            cache->w_stem = ws;
            cache->h_f = hc;
            cache->w_f = wc;
        }
        return x;
    }

    void backward(Cache& c, const std::vector<float>& d_features) {
        std::vector<float> g = proj.backward(c.proj_cols, d_features, c.h_f, c.w_f);
        for (std::size_t i = blocks.size(); i-- > 0;) g = blocks[i].backward(c.blocks[i], g);
        g = nn::relu_backward(c.stem_out, g);
        g = stem_gn.backward(c.stem_g, g);
        stem.backward(c.stem_cols, g, c.h_in, c.w_in);  // input gradient unused
    }

    int feature_size(int image_size) const {
        int s = stem.out_size(image_size);
        for (const auto& b : blocks) s = b.conv1.out_size(s);
        return s;
    }
};

// Two 3D conv layers mapping the aligned feature cube to per-cell logits.
struct VolumeClassifier {
    nn::Conv3d conv1, conv2;

    VolumeClassifier() = default;
    VolumeClassifier(const std::string& name, int f_dim, int hidden, int k, Rng& rng)
        : conv1(name + ".conv1", f_dim, hidden, 3, 1, 1, rng),
          conv2(name + ".conv2", hidden, k, 3, 1, 1, rng) {}

    void collect(std::vector<nn::Param*>& out) {
        conv1.collect(out);
        conv2.collect(out);
    }

    struct Cache {
        std::vector<float> cols1, relu1, cols2;
        int s = 0;
    };

    // Input [F, S^3] planes -> logits [K, S^3].
    std::vector<float> forward(const std::vector<float>& cube, int s,
                               Cache* cache = nullptr) const {
        std::vector<float> cols1;
        std::vector<float> x = conv1.forward(cube, s, s, s, cache ? &cols1 : nullptr);
        nn::relu_inplace(x);
        std::vector<float> relu1 = cache ? x : std::vector<float>();
        std::vector<float> cols2;
        std::vector<float> y = conv2.forward(x, s, s, s, cache ? &cols2 : nullptr);
        if (cache) {
            cache->cols1 = std::move(cols1);
            cache->relu1 = std::move(relu1);
            cache->cols2 = std::move(cols2);
            cache->s = s;
        }
        return y;
    }

    std::vector<float> backward(Cache& c, const std::vector<float>& dy) {
        std::vector<float> g = conv2.backward(c.cols2, dy, c.s, c.s, c.s);
        g = nn::relu_backward(c.relu1, g);
        return conv1.backward(c.cols1, g, c.s, c.s, c.s);
    }
};

// ---------------------------------------------------------------------------

struct PredictorConfig {
    GridSpec grid;
    int cells_per_axis = 8;
    int k_hand = 512;
    int k_object = 512;
    int stem_width = 16;
    std::vector<int> stage_widths{16, 24, 32, 48};
    int feature_dim = 48;
    int head_hidden = 64;
    std::uint64_t seed = 2;

    void validate() const {
        grid.validate();
        if (cells_per_axis <= 0) throw std::runtime_error("cells_per_axis must be positive");
        if (k_hand <= 0 || k_object <= 0)
            throw std::runtime_error("codebook sizes must be positive");
        if (stem_width <= 0 || feature_dim <= 0 || head_hidden <= 0)
            throw std::runtime_error("channel widths must be positive");
        if (stage_widths.size() != 4)
            throw std::runtime_error("stage_widths must list 4 values");
        for (int w : stage_widths)
            if (w <= 0) throw std::runtime_error("channel widths must be positive");
    }
};

inline json predictor_config_to_json(const PredictorConfig& cfg) {
    return {{"grid",
             {{"resolution", cfg.grid.resolution},
              {"half_extent", cfg.grid.half_extent},
              {"truncation", cfg.grid.truncation},
              {"origin", {cfg.grid.origin.x, cfg.grid.origin.y, cfg.grid.origin.z}}}},
            {"cells_per_axis", cfg.cells_per_axis},
            {"k_hand", cfg.k_hand},
            {"k_object", cfg.k_object},
            {"stem_width", cfg.stem_width},
            {"stage_widths", cfg.stage_widths},
            {"feature_dim", cfg.feature_dim},
            {"head_hidden", cfg.head_hidden},
            {"seed", cfg.seed}};
}

inline PredictorConfig predictor_config_from_json(const json& j) {
    PredictorConfig cfg;
    const json& g = j.at("grid");
    cfg.grid.resolution = g.at("resolution").get<int>();
    cfg.grid.half_extent = g.at("half_extent").get<double>();
    cfg.grid.truncation = g.at("truncation").get<double>();
    auto o = g.at("origin");
    cfg.grid.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
    cfg.cells_per_axis = j.at("cells_per_axis").get<int>();
    cfg.k_hand = j.at("k_hand").get<int>();
    cfg.k_object = j.at("k_object").get<int>();
    cfg.stem_width = j.at("stem_width").get<int>();
    cfg.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

// Image [0,1] HWC -> centered [3, H, W] planes.
inline std::vector<float> image_to_planes(const Image& img) {
    std::vector<float> planes(static_cast<std::size_t>(3) * img.height * img.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                planes[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] =
                    img.at(x, y, c) * 2.0f - 1.0f;
    return planes;
}

inline FeatureMap planes_to_feature_map(const std::vector<float>& planes, int f, int h, int w) {
    FeatureMap fm(w, h, f);
    for (int c = 0; c < f; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                fm.cell(x, y)[c] = planes[(static_cast<std::size_t>(c) * h + y) * w + x];
    return fm;
}

class Predictor {
public:
    PredictorConfig cfg;
    Backbone backbone;
    VolumeClassifier hand_head, object_head;
    ClassWeights hand_weights, object_weights;  // recorded at training time

    explicit Predictor(PredictorConfig c) : cfg(std::move(c)) {
        cfg.validate();
        Rng rng(cfg.seed, 0x9ed1c7);
        backbone = Backbone(cfg.stem_width, cfg.stage_widths, cfg.feature_dim, rng);
        hand_head = VolumeClassifier("hand_head", cfg.feature_dim, cfg.head_hidden, cfg.k_hand,
                                     rng);
        object_head = VolumeClassifier("object_head", cfg.feature_dim, cfg.head_hidden,
                                       cfg.k_object, rng);
    }

    std::vector<nn::Param*> params() {
        std::vector<nn::Param*> out;
        backbone.collect(out);
        hand_head.collect(out);
        object_head.collect(out);
        return out;
    }

    FeatureMap encode_image(const Image& img) const {
        std::vector<float> planes = image_to_planes(img);
        std::vector<float> feat = backbone.forward(planes, img.height, img.width);
        return planes_to_feature_map(feat, cfg.feature_dim,
                                     backbone.feature_size(img.height),
                                     backbone.feature_size(img.width));
    }

    ViewProbabilities head_probabilities(const std::vector<float>& aligned_cube,
                                         ShapeClass cls, int view_id) const {
        const int S = cfg.cells_per_axis;
        const int F = cfg.feature_dim;
        std::size_t cells = static_cast<std::size_t>(S) * S * S;
        // cell-major (cells, F) -> channel-major (F, cells)
        std::vector<float> planes(aligned_cube.size());
        for (std::size_t c = 0; c < cells; ++c)
            for (int f = 0; f < F; ++f)
                planes[static_cast<std::size_t>(f) * cells + c] = aligned_cube[c * F + f];
        const VolumeClassifier& head = cls == ShapeClass::kHand ? hand_head : object_head;
        int k = cls == ShapeClass::kHand ? cfg.k_hand : cfg.k_object;
        std::vector<float> logits = head.forward(planes, S);
        // channel-major (K, cells) -> rows (cells, K)
        std::vector<float> rows(logits.size());
        for (std::size_t c = 0; c < cells; ++c)
            for (int j = 0; j < k; ++j)
                rows[c * k + j] = logits[static_cast<std::size_t>(j) * cells + c];
        ViewProbabilities out;
        out.cells_per_axis = S;
        out.k = k;
        out.shape_class = cls;
        out.view_id = view_id;
        out.probs = nn::softmax_rows(rows, static_cast<int>(cells), k);
        return out;
    }

    ViewProbabilities predict_view(const CameraView& view, ShapeClass cls) const {
        view.validate();
        FeatureMap fm = encode_image(view.image);
        std::vector<float> aligned =
            build_aligned_feature_grid(fm, view, cfg.grid, cfg.cells_per_axis);
        return head_probabilities(aligned, cls, view.view_id);
    }

    // Shared backbone pass for both heads.
    std::pair<ViewProbabilities, ViewProbabilities> predict_both(const CameraView& view) const {
        view.validate();
        FeatureMap fm = encode_image(view.image);
        std::vector<float> aligned =
            build_aligned_feature_grid(fm, view, cfg.grid, cfg.cells_per_axis);
        return {head_probabilities(aligned, ShapeClass::kHand, view.view_id),
                head_probabilities(aligned, ShapeClass::kObject, view.view_id)};
    }
};

// ---------------------------------------------------------------------------
// Training.

// One supervised view: the rendered image with its camera, plus the two
// ground-truth code cubes extracted by the autoencoders.
struct LatentViewRecord {
    std::string frame_id;
    CameraView view;
    LatentCube hand_codes;
    LatentCube object_codes;
};

struct PredTrainConfig {
    int steps = 1500;
    int batch_images = 4;
    double lr = 1e-3;
    std::uint64_t seed = 11;
    double early_stop_ratio = 0.0;

    void validate() const {
        if (steps <= 0 || batch_images <= 0)
            throw std::runtime_error("training sizes must be positive");
        if (lr <= 0.0) throw std::runtime_error("learning rate must be positive");
    }
};

struct PredTrainStats {
    int step = 0;
    double total = 0.0;
    double hand = 0.0;
    double object = 0.0;
};

inline std::vector<PredTrainStats> train_predictor(Predictor& model,
                                                   const std::vector<LatentViewRecord>& records,
                                                   const ClassWeights& hand_w,
                                                   const ClassWeights& object_w,
                                                   const PredTrainConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw std::runtime_error("no training records");
    hand_w.validate(model.cfg.k_hand);
    object_w.validate(model.cfg.k_object);
    for (const auto& r : records) {
        if (r.hand_codes.codebook_size != model.cfg.k_hand ||
            r.object_codes.codebook_size != model.cfg.k_object)
            throw std::runtime_error(
                "codebook size mismatch between latent dataset and predictor");
        if (r.hand_codes.cells_per_axis != model.cfg.cells_per_axis ||
            r.object_codes.cells_per_axis != model.cfg.cells_per_axis)
            throw std::runtime_error("latent cube resolution mismatch");
    }
    model.hand_weights = hand_w;
    model.object_weights = object_w;

    std::vector<nn::Param*> params = model.params();
    nn::Adam adam;
    adam.lr = cfg.lr;

    const int S = model.cfg.cells_per_axis;
    const int F = model.cfg.feature_dim;
    const std::size_t cells = static_cast<std::size_t>(S) * S * S;

    std::vector<PredTrainStats> log;
    double initial_total = -1.0;
    for (int step = 0; step < cfg.steps; ++step) {
        Rng step_rng(cfg.seed, 0x9d000000u + static_cast<std::uint64_t>(step));
        std::vector<int> batch;
        if (static_cast<std::size_t>(cfg.batch_images) >= records.size()) {
            batch.resize(records.size());
            for (std::size_t i = 0; i < records.size(); ++i) batch[i] = static_cast<int>(i);
        } else {
            batch = step_rng.sample_without_replacement(static_cast<int>(records.size()),
                                                        cfg.batch_images);
        }

        for (nn::Param* p : params) p->zero_grad();
        double grad_scale = 1.0 / static_cast<double>(batch.size());
        double hand_loss = 0.0, object_loss = 0.0;

        for (int ri : batch) {
            const LatentViewRecord& rec = records[static_cast<std::size_t>(ri)];
            rec.view.validate();

            std::vector<float> planes = image_to_planes(rec.view.image);
            Backbone::Cache bb_cache;
            std::vector<float> feat = model.backbone.forward(
                planes, rec.view.image.height, rec.view.image.width, &bb_cache);
            FeatureMap fm = planes_to_feature_map(feat, F, bb_cache.h_f, bb_cache.w_f);

            std::vector<BilinearTap> taps;
            std::vector<float> aligned =
                build_aligned_feature_grid(fm, rec.view, model.cfg.grid, S, &taps);

            // cell-major -> channel-major for the 3D heads
            std::vector<float> cube(aligned.size());
            for (std::size_t c = 0; c < cells; ++c)
                for (int f = 0; f < F; ++f)
                    cube[static_cast<std::size_t>(f) * cells + c] = aligned[c * F + f];

            VolumeClassifier::Cache hand_cache, obj_cache;
            std::vector<float> hand_logits = model.hand_head.forward(cube, S, &hand_cache);
            std::vector<float> obj_logits = model.object_head.forward(cube, S, &obj_cache);

            auto to_rows = [cells](const std::vector<float>& cm, int k) {
                std::vector<float> rows(cm.size());
                for (std::size_t c = 0; c < cells; ++c)
                    for (int j = 0; j < k; ++j)
                        rows[c * k + j] = cm[static_cast<std::size_t>(j) * cells + c];
                return rows;
            };
            auto to_cm = [cells](const std::vector<float>& rows, int k) {
                std::vector<float> cm(rows.size());
                for (std::size_t c = 0; c < cells; ++c)
                    for (int j = 0; j < k; ++j)
                        cm[static_cast<std::size_t>(j) * cells + c] = rows[c * k + j];
                return cm;
            };

            std::vector<float> hand_rows = to_rows(hand_logits, model.cfg.k_hand);
            std::vector<float> obj_rows = to_rows(obj_logits, model.cfg.k_object);
            std::vector<float> d_hand_rows(hand_rows.size(), 0.0f);
            std::vector<float> d_obj_rows(obj_rows.size(), 0.0f);
            hand_loss += weighted_cross_entropy_logits(
                hand_rows, rec.hand_codes.indices, static_cast<int>(cells), model.cfg.k_hand,
                hand_w, &d_hand_rows, grad_scale);
            object_loss += weighted_cross_entropy_logits(
                obj_rows, rec.object_codes.indices, static_cast<int>(cells), model.cfg.k_object,
                object_w, &d_obj_rows, grad_scale);

            std::vector<float> d_cube(cube.size(), 0.0f);
            {
                std::vector<float> d_hand_cm = to_cm(d_hand_rows, model.cfg.k_hand);
                std::vector<float> g = model.hand_head.backward(hand_cache, d_hand_cm);
                for (std::size_t i = 0; i < d_cube.size(); ++i) d_cube[i] += g[i];
                std::vector<float> d_obj_cm = to_cm(d_obj_rows, model.cfg.k_object);
                g = model.object_head.backward(obj_cache, d_obj_cm);
                for (std::size_t i = 0; i < d_cube.size(); ++i) d_cube[i] += g[i];
            }

            // channel-major -> cell-major, then scatter through the taps into
            // feature-plane gradients.
            std::vector<float> d_feat(feat.size(), 0.0f);
            int fh = bb_cache.h_f, fw = bb_cache.w_f;
            for (std::size_t c = 0; c < cells; ++c) {
                const BilinearTap& tap = taps[c];
                if (!tap.valid) continue;
                for (int n = 0; n < 4; ++n) {
                    std::size_t plane_base =
                        static_cast<std::size_t>(tap.y[n]) * fw + tap.x[n];
                    for (int f = 0; f < F; ++f)
                        d_feat[static_cast<std::size_t>(f) * fh * fw + plane_base] +=
                            tap.w[n] * d_cube[static_cast<std::size_t>(f) * cells + c];
                }
            }
            model.backbone.backward(bb_cache, d_feat);
        }

        adam.step(params);
        hand_loss /= static_cast<double>(batch.size());
        object_loss /= static_cast<double>(batch.size());

        PredTrainStats st;
        st.step = step;
        st.hand = hand_loss;
        st.object = object_loss;
        st.total = hand_loss + object_loss;
        log.push_back(st);
        if (initial_total < 0.0) initial_total = st.total;
        if (cfg.early_stop_ratio > 0.0 && st.total < cfg.early_stop_ratio * initial_total)
            break;
    }
    return log;
}

// ---------------------------------------------------------------------------
// Checkpointing (same container as the autoencoder).

inline void save_predictor(Predictor& model, const fs::path& dir) {
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["kind"] = "predictor";
    manifest["config"] = predictor_config_to_json(model.cfg);
    manifest["class_weights"] = {
        {"hand",
         {{"empty_index", model.hand_weights.empty_index},
          {"empty_weight", model.hand_weights.empty_weight},
          {"other_weight", model.hand_weights.other_weight}}},
        {"object",
         {{"empty_index", model.object_weights.empty_index},
          {"empty_weight", model.object_weights.empty_weight},
          {"other_weight", model.object_weights.other_weight}}}};
    json params = json::array();
    std::vector<nn::Param*> ps = model.params();
    save_param_blobs(ps, dir / "params", params);
    manifest["params"] = params;
    write_manifest(dir, manifest);
}

inline Predictor load_predictor(const fs::path& dir) {
    json manifest = read_manifest(dir);
    if (manifest.at("kind").get<std::string>() != "predictor")
        throw std::runtime_error("checkpoint at " + dir.string() + " is not a predictor");
    Predictor model(predictor_config_from_json(manifest.at("config")));
    std::vector<nn::Param*> ps = model.params();
    load_param_blobs(ps, dir / "params", manifest.at("params"));
    const json& cw = manifest.at("class_weights");
    model.hand_weights = {cw.at("hand").at("empty_index").get<int>(),
                          cw.at("hand").at("empty_weight").get<double>(),
                          cw.at("hand").at("other_weight").get<double>()};
    model.object_weights = {cw.at("object").at("empty_index").get<int>(),
                            cw.at("object").at("empty_weight").get<double>(),
                            cw.at("object").at("other_weight").get<double>()};
    return model;
}

}  // namespace svho
