#pragma once

// Procedural human-object scenes: a figure and an object of fixed per-word
// appearance on a flat background, laid out by the interaction verb. These
// stand in for natural photos both when pretraining the toy backbone and as
// benchmark sources.

#include "hoiedit/common.hpp"
#include "hoiedit/rng.hpp"

#include <array>
#include <string>
#include <vector>

namespace hoiedit {

using Rgb = std::array<double, 3>;

// Pixels stored one per row (y * res + x), channels in columns, values in [0, 1].
struct Image {
    int res = 0;
    Matrix pixels;

    static Image filled(int res, const Rgb& c);
    Rgb at(int x, int y) const;
    void set(int x, int y, const Rgb& c);
};

struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0, x1) x [y0, y1)
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool operator==(const Box&) const = default;
};

struct EntityStyle {
    std::string word;
    Rgb color;
    int width = 0;
    int height = 0;
};

const std::vector<EntityStyle>& subject_styles();
const std::vector<EntityStyle>& object_styles();
const std::vector<EntityStyle>& background_styles();
// Interactions the toy world can depict.
const std::vector<std::string>& scene_verbs();

const EntityStyle& subject_style(const std::string& word);
const EntityStyle& object_style(const std::string& word);
const EntityStyle& background_style(const std::string& word);

struct SceneSpec {
    std::string subject;
    std::string verb;
    std::string object;
    std::string background;
    // Horizontal placement in [0, 1] across the feasible range.
    double placement = 0.5;
    // Per-entity colour offsets, applied before clamping.
    Rgb subject_tint{0, 0, 0};
    Rgb object_tint{0, 0, 0};
    Rgb background_tint{0, 0, 0};
};

struct Scene {
    SceneSpec spec;
    Image image;
    Matrix mask_subject;  // res x res, {0, 1}
    Matrix mask_object;
    Matrix mask_background;
    Box subject_box;
    Box object_box;
    Rgb subject_color;
    Rgb object_color;
    Rgb background_color;
};

constexpr int kSceneRes = 32;

Scene render_scene(const SceneSpec& spec, int res = kSceneRes);

// Random spec with colour jitter of up to +-jitter per channel and placement
// 0.5 +- spread. The narrow default keeps each verb's layout recognisable at
// high noise, which the toy backbone needs to learn verb conditioning.
SceneSpec random_scene_spec(CounterRng& rng, double jitter = 0.04, double spread = 0.05);

double color_distance(const Rgb& a, const Rgb& b);

// Pixel space [0, 1] <-> latent space [-1, 1] (the toy has no VAE).
Matrix to_latent(const Image& img);
Image from_latent(const Matrix& z, int res);

}  // namespace hoiedit
