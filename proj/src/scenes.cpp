#include "hoiedit/scenes.hpp"

#include <algorithm>
#include <cmath>

namespace hoiedit {

namespace {

constexpr int kSubjectW = 5;
constexpr int kSubjectH = 12;
constexpr int kHeadW = 3;
constexpr int kHeadH = 3;
constexpr int kGround = 30;  // grounded entities end just above this row

const EntityStyle& find_style(const std::vector<EntityStyle>& styles, const std::string& word, const char* what) {
    for (const EntityStyle& s : styles) {
        if (s.word == word) return s;
    }
    throw LookupError(std::string("unknown ") + what + " '" + word + "'");
}

Rgb tinted(const Rgb& c, const Rgb& tint) {
    Rgb out;
    for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = std::clamp(c[i] + tint[i], 0.0, 1.0);
    return out;
}

// Lays out subject and object boxes for a verb; `placement` slides the pair
// horizontally over the feasible range.
std::pair<Box, Box> layout(const std::string& verb, int ow, int oh, double placement, int res) {
    Box s{0, 0, kSubjectW, kSubjectH};
    Box o{0, 0, ow, oh};
    auto stand = [](Box& b, int bottom) {
        const int h = b.height();
        b.y1 = bottom;
        b.y0 = bottom - h;
    };
    auto chest = [&](Box& obj, const Box& subj) {
        const int h = obj.height();
        obj.y0 = subj.y0 + 3 - h / 2;
        obj.y1 = obj.y0 + h;
    };
    auto place_x = [](Box& b, int x0) {
        const int w = b.width();
        b.x0 = x0;
        b.x1 = x0 + w;
    };
    const int wide = std::max(kSubjectW, ow);
    // Group-relative x offsets, then a shared shift.
    int group_w = 0;
    if (verb == "ride" || verb == "carry") {
        group_w = wide;
        place_x(o, (wide - ow) / 2);
        place_x(s, (wide - kSubjectW) / 2);
        if (verb == "ride") {
            stand(o, kGround);
            stand(s, o.y0);
        } else {
            stand(s, kGround);
            stand(o, s.y0);
        }
    } else if (verb == "hold" || verb == "kick") {
        const int gap = verb == "kick" ? 1 : 0;
        group_w = kSubjectW + gap + ow;
        place_x(s, 0);
        place_x(o, kSubjectW + gap);
        stand(s, kGround);
        if (verb == "hold") chest(o, s); else stand(o, kGround);
    } else if (verb == "feed" || verb == "walk") {
        const int gap = verb == "walk" ? 1 : 0;
        group_w = ow + gap + kSubjectW;
        place_x(o, 0);
        place_x(s, ow + gap);
        stand(s, kGround);
        if (verb == "feed") chest(o, s); else stand(o, kGround);
    } else {
        throw LookupError("scene generator cannot depict verb '" + verb + "'");
    }
    const int slack = res - 2 - group_w;
    const int shift = 1 + static_cast<int>(std::lround(std::clamp(placement, 0.0, 1.0) * std::max(slack, 0)));
    s.x0 += shift; s.x1 += shift;
    o.x0 += shift; o.x1 += shift;
    return {s, o};
}

}  // namespace

Image Image::filled(int res, const Rgb& c) {
    Image img;
    img.res = res;
    img.pixels.resize(static_cast<Eigen::Index>(res) * res, 3);
    for (Eigen::Index i = 0; i < img.pixels.rows(); ++i) {
        for (int ch = 0; ch < 3; ++ch) img.pixels(i, ch) = c[static_cast<std::size_t>(ch)];
    }
    return img;
}

Rgb Image::at(int x, int y) const {
    const Eigen::Index i = static_cast<Eigen::Index>(y) * res + x;
    return {pixels(i, 0), pixels(i, 1), pixels(i, 2)};
}

void Image::set(int x, int y, const Rgb& c) {
    const Eigen::Index i = static_cast<Eigen::Index>(y) * res + x;
    for (int ch = 0; ch < 3; ++ch) pixels(i, ch) = c[static_cast<std::size_t>(ch)];
}

const std::vector<EntityStyle>& subject_styles() {
    static const std::vector<EntityStyle> styles = {
        {"man", {0.90, 0.10, 0.10}, kSubjectW, kSubjectH},
        {"woman", {0.62, 0.12, 0.70}, kSubjectW, kSubjectH},
        {"boy", {1.00, 0.50, 0.00}, kSubjectW, kSubjectH},
        {"girl", {0.95, 0.35, 0.65}, kSubjectW, kSubjectH},
        {"rider", {0.10, 0.20, 0.95}, kSubjectW, kSubjectH},
    };
    return styles;
}

const std::vector<EntityStyle>& object_styles() {
    static const std::vector<EntityStyle> styles = {
        {"horse", {0.40, 0.18, 0.00}, 10, 7},
        {"dog", {0.98, 0.90, 0.10}, 7, 5},
        {"ball", {0.00, 0.85, 0.90}, 4, 4},
        {"skateboard", {0.10, 0.90, 0.30}, 10, 3},
        {"chair", {0.25, 0.00, 0.35}, 6, 7},
        {"cat", {0.05, 0.05, 0.05}, 6, 4},
    };
    return styles;
}

const std::vector<EntityStyle>& background_styles() {
    static const std::vector<EntityStyle> styles = {
        {"field", {0.35, 0.60, 0.30}, 0, 0},
        {"beach", {0.88, 0.82, 0.60}, 0, 0},
        {"street", {0.42, 0.42, 0.45}, 0, 0},
        {"room", {0.62, 0.50, 0.42}, 0, 0},
        {"snow", {0.93, 0.95, 0.98}, 0, 0},
    };
    return styles;
}

const std::vector<std::string>& scene_verbs() {
    static const std::vector<std::string> verbs = {"ride", "carry", "hold", "kick", "feed", "walk"};
    return verbs;
}

const EntityStyle& subject_style(const std::string& word) { return find_style(subject_styles(), word, "subject"); }
const EntityStyle& object_style(const std::string& word) { return find_style(object_styles(), word, "object"); }
const EntityStyle& background_style(const std::string& word) {
    return find_style(background_styles(), word, "background");
}

double color_distance(const Rgb& a, const Rgb& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Scene render_scene(const SceneSpec& spec, int res) {
    const EntityStyle& ss = subject_style(spec.subject);
    const EntityStyle& os = object_style(spec.object);
    const EntityStyle& bs = background_style(spec.background);

    Scene scene;
    scene.spec = spec;
    scene.subject_color = tinted(ss.color, spec.subject_tint);
    scene.object_color = tinted(os.color, spec.object_tint);
    scene.background_color = tinted(bs.color, spec.background_tint);
    auto [sbox, obox] = layout(spec.verb, os.width, os.height, spec.placement, res);
    scene.subject_box = sbox;
    scene.object_box = obox;

    scene.image = Image::filled(res, scene.background_color);
    scene.mask_subject = Matrix::Zero(res, res);
    scene.mask_object = Matrix::Zero(res, res);
    for (int y = obox.y0; y < obox.y1; ++y) {
        for (int x = obox.x0; x < obox.x1; ++x) {
            scene.image.set(x, y, scene.object_color);
            scene.mask_object(y, x) = 1.0;
        }
    }
    const int head_x0 = sbox.x0 + (kSubjectW - kHeadW) / 2;
    for (int y = sbox.y0; y < sbox.y1; ++y) {
        for (int x = sbox.x0; x < sbox.x1; ++x) {
            const bool head_row = y < sbox.y0 + kHeadH;
            if (head_row && (x < head_x0 || x >= head_x0 + kHeadW)) continue;
            scene.image.set(x, y, scene.subject_color);
            scene.mask_subject(y, x) = 1.0;
            scene.mask_object(y, x) = 0.0;
        }
    }
    scene.mask_background = (1.0 - scene.mask_subject.array() - scene.mask_object.array()).matrix();
    return scene;
}

Matrix to_latent(const Image& img) { return (2.0 * img.pixels.array() - 1.0).matrix(); }

Image from_latent(const Matrix& z, int res) {
    if (z.rows() != static_cast<Eigen::Index>(res) * res || z.cols() != 3) throw ShapeError("from_latent: shape mismatch");
    Image img;
    img.res = res;
    img.pixels = ((z.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
    return img;
}

SceneSpec random_scene_spec(CounterRng& rng, double jitter, double spread) {
    SceneSpec spec;
    spec.subject = subject_styles()[rng.below(subject_styles().size())].word;
    spec.object = object_styles()[rng.below(object_styles().size())].word;
    spec.background = background_styles()[rng.below(background_styles().size())].word;
    spec.verb = scene_verbs()[rng.below(scene_verbs().size())];
    spec.placement = 0.5 + spread * (2.0 * rng.uniform() - 1.0);
    for (Rgb* tint : {&spec.subject_tint, &spec.object_tint, &spec.background_tint}) {
        for (double& c : *tint) c = jitter * (2.0 * rng.uniform() - 1.0);
    }
    return spec;
}

}  // namespace hoiedit
