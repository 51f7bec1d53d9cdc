#include "hoiedit/perception.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace hoiedit {

namespace {

constexpr int kMinComponent = 6;
constexpr int kMaxContactGap = 3;

std::optional<int> expected_area(const std::string& label) {
    for (const auto* table : {&subject_styles(), &object_styles()}) {
        for (const EntityStyle& s : *table) {
            if (s.word != label) continue;
            // Figures leave the two head-row shoulders empty.
            const bool figure = table == &subject_styles();
            return s.width * s.height - (figure ? 6 : 0);
        }
    }
    return std::nullopt;
}

double size_score(int count, const std::string& label) {
    const auto want = expected_area(normalize_label(label));
    if (!want || count <= 0) return count > 0 ? 1.0 : 0.0;
    const double r = static_cast<double>(count) / *want;
    return std::min(r, 1.0 / r);
}

}  // namespace

std::string normalize_label(const std::string& label) {
    std::string out;
    bool pending_sep = false;
    for (char c : label) {
        if (c == ' ' || c == '_' || c == '-' || c == '\t') {
            pending_sep = !out.empty();
            continue;
        }
        if (pending_sep) out.push_back('_');
        pending_sep = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::optional<Box> largest_component(const Image& img, const Rgb& color, double tolerance, int min_pixels,
                                     int* pixel_count) {
    const int res = img.res;
    std::vector<char> hit(static_cast<std::size_t>(res * res), 0);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) hit[static_cast<std::size_t>(y * res + x)] = color_distance(img.at(x, y), color) < tolerance;
    }
    std::vector<int> label(hit.size(), -1);
    std::vector<int> stack;
    int best = 0;
    Box best_box;
    for (int start = 0; start < res * res; ++start) {
        if (!hit[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
        Box b{res, res, 0, 0};
        int n = 0;
        stack.assign(1, start);
        label[static_cast<std::size_t>(start)] = start;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int x = p % res, y = p / res;
            ++n;
            b.x0 = std::min(b.x0, x); b.y0 = std::min(b.y0, y);
            b.x1 = std::max(b.x1, x + 1); b.y1 = std::max(b.y1, y + 1);
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (nx[k] < 0 || ny[k] < 0 || nx[k] >= res || ny[k] >= res) continue;
                const auto q = static_cast<std::size_t>(ny[k] * res + nx[k]);
                if (hit[q] && label[q] < 0) {
                    label[q] = start;
                    stack.push_back(static_cast<int>(q));
                }
            }
        }
        if (n > best) {
            best = n;
            best_box = b;
        }
    }
    if (pixel_count) *pixel_count = best;
    if (best < min_pixels) return std::nullopt;
    return best_box;
}

std::string classify_interaction(const Box& s, const Box& o) {
    const int overlap = std::min(s.x1, o.x1) - std::max(s.x0, o.x0);
    if (overlap >= 0.5 * std::min(s.width(), o.width())) {
        if (o.cy() > s.cy()) return o.y0 - s.y1 <= kMaxContactGap ? "ride" : "";
        return s.y0 - o.y1 <= kMaxContactGap ? "carry" : "";
    }
    const bool right = o.cx() > s.cx();
    const int gap = right ? o.x0 - s.x1 : s.x0 - o.x1;
    if (gap > kMaxContactGap) return "";
    const double v = (o.cy() - s.y0) / std::max(1, s.height());
    if (right) return v < 0.55 ? "hold" : "kick";
    return v < 0.55 ? "feed" : "walk";
}

std::vector<Detection> MockHoiDetector::detect(const Image& img, const EntityPalette& p) const {
    int ns = 0, no = 0;
    const auto sbox = largest_component(img, p.subject_color, kMockColorTolerance, kMinComponent, &ns);
    const auto obox = largest_component(img, p.object_color, kMockColorTolerance, kMinComponent, &no);
    if (!sbox || !obox) return {};
    const std::string verb = classify_interaction(*sbox, *obox);
    if (verb.empty()) return {};
    Detection d;
    d.triplet = {p.subject_label, verb, p.object_label};
    d.subject_box = *sbox;
    d.object_box = *obox;
    d.confidence = std::min(size_score(ns, p.subject_label), size_score(no, p.object_label));
    return {d};
}

std::optional<Box> MockObjectDetector::locate(const Image& img, const std::string& label,
                                              const EntityPalette& p) const {
    const std::string want = normalize_label(label);
    if (want == normalize_label(p.subject_label)) {
        return largest_component(img, p.subject_color, kMockColorTolerance, kMinComponent);
    }
    if (want == normalize_label(p.object_label)) {
        return largest_component(img, p.object_color, kMockColorTolerance, kMinComponent);
    }
    return std::nullopt;
}

Matrix MockSegmenter::segment(const Image& img, const Box& box) const {
    const int res = img.res;
    Matrix mask = Matrix::Zero(res, res);
    // Ring of pixels just outside the box.
    std::vector<Rgb> ring;
    for (int y = box.y0 - 1; y <= box.y1; ++y) {
        for (int x = box.x0 - 1; x <= box.x1; ++x) {
            const bool inside = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
            if (inside || x < 0 || y < 0 || x >= res || y >= res) continue;
            ring.push_back(img.at(x, y));
        }
    }
    // The ring colour with the most close neighbours stands in for the surroundings.
    Rgb surround{-10.0, -10.0, -10.0};
    int best = -1;
    for (const Rgb& c : ring) {
        int n = 0;
        for (const Rgb& d : ring) n += color_distance(c, d) < 0.15;
        if (n > best) {
            best = n;
            surround = c;
        }
    }
    for (int y = std::max(box.y0, 0); y < std::min(box.y1, res); ++y) {
        for (int x = std::max(box.x0, 0); x < std::min(box.x1, res); ++x) {
            if (color_distance(img.at(x, y), surround) > 0.2) mask(y, x) = 1.0;
        }
    }
    return mask;
}

MockEmbedder::MockEmbedder(int dim, std::uint64_t seed) : proj_(dim, 9) {
    CounterRng rng(seed);
    for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = rng.normal() / std::sqrt(static_cast<double>(dim));
}

Eigen::VectorXd MockEmbedder::embed(const Image& img, const Matrix& mask) const {
    const int res = img.res;
    if (mask.rows() != res || mask.cols() != res) throw ShapeError("embed: mask " + shape_str(mask) + " vs image res " + std::to_string(res));
    double n = 0.0;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
    int x0 = res, y0 = res, x1 = 0, y1 = 0;
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            if (mask(y, x) <= 0.5) continue;
            const Rgb c = img.at(x, y);
            const Eigen::Vector3d v(c[0], c[1], c[2]);
            sum += v;
            sq += v.cwiseProduct(v);
            n += 1.0;
            x0 = std::min(x0, x); y0 = std::min(y0, y);
            x1 = std::max(x1, x + 1); y1 = std::max(y1, y + 1);
        }
    }
    if (n == 0.0) return Eigen::VectorXd::Zero(dim());
    const Eigen::Vector3d mean = sum / n;
    const Eigen::Vector3d var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
    Eigen::VectorXd f(9);
    f << 2.0 * (mean.array() - 0.5).matrix(), var.cwiseSqrt(), 0.5 * std::log(n / 40.0),
        0.5 * std::log(static_cast<double>(y1 - y0) / (x1 - x0)), n / ((x1 - x0) * (y1 - y0)) - 0.75;
    return proj_ * f;
}

PerceptionBackends mock_backends() {
    return {std::make_shared<MockHoiDetector>(), std::make_shared<MockObjectDetector>(),
            std::make_shared<MockSegmenter>(), std::make_shared<MockEmbedder>()};
}

}  // namespace hoiedit
