#include "hoiedit/bundle.hpp"

#include "hoiedit/archive.hpp"
#include "hoiedit/image_io.hpp"

namespace hoiedit {

namespace {

nlohmann::json rgb_json(const Rgb& c) { return {c[0], c[1], c[2]}; }

Rgb rgb_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

nlohmann::json box_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

std::filesystem::path require(const std::filesystem::path& dir, const char* name) {
    const auto p = dir / name;
    if (!std::filesystem::exists(p)) {
        throw LookupError("scene bundle '" + dir.string() + "' is missing " + name);
    }
    return p;
}

}  // namespace

SceneBundle bundle_from_scene(const Scene& sc) {
    SceneBundle b;
    b.image = sc.image;
    b.mask_subject = sc.mask_subject;
    b.mask_object = sc.mask_object;
    b.mask_background = sc.mask_background;
    b.source = {sc.spec.subject, sc.spec.verb, sc.spec.object};
    b.background = sc.spec.background;
    b.palette = {sc.spec.subject, sc.spec.object, sc.subject_color, sc.object_color, sc.background_color};
    b.meta = {{"subject", sc.spec.subject},
              {"interaction", sc.spec.verb},
              {"object", sc.spec.object},
              {"background", sc.spec.background},
              {"placement", sc.spec.placement},
              {"colors",
               {{"subject", rgb_json(sc.subject_color)},
                {"object", rgb_json(sc.object_color)},
                {"background", rgb_json(sc.background_color)}}},
              {"boxes", {{"subject", box_json(sc.subject_box)}, {"object", box_json(sc.object_box)}}}};
    return b;
}

void save_scene_bundle(const SceneBundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_png(b.image, dir / "image.png");
    write_mask_png(b.mask_subject, dir / "mask_subject.png");
    write_mask_png(b.mask_object, dir / "mask_object.png");
    write_mask_png(b.mask_background, dir / "mask_background.png");
    const std::string text = b.meta.dump(2) + "\n";
    write_file(dir / "meta.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

SceneBundle load_scene_bundle(const std::filesystem::path& dir) {
    SceneBundle b;
    b.image = read_png(require(dir, "image.png"));
    b.mask_subject = read_mask_png(require(dir, "mask_subject.png"));
    b.mask_object = read_mask_png(require(dir, "mask_object.png"));
    b.mask_background = read_mask_png(require(dir, "mask_background.png"));
    const auto bytes = read_file(require(dir, "meta.json"));
    try {
        b.meta = nlohmann::json::parse(bytes.begin(), bytes.end());
        b.source = {b.meta.at("subject").get<std::string>(), b.meta.at("interaction").get<std::string>(),
                    b.meta.at("object").get<std::string>()};
        b.background = b.meta.at("background").get<std::string>();
        const auto& c = b.meta.at("colors");
        b.palette = {b.source.subject, b.source.object, rgb_from(c.at("subject")), rgb_from(c.at("object")),
                     rgb_from(c.at("background"))};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scene bundle '" + dir.string() + "' has bad meta.json: " + e.what());
    }
    for (const Matrix* m : {&b.mask_subject, &b.mask_object, &b.mask_background}) {
        if (m->rows() != b.image.res || m->cols() != b.image.res) {
            throw ShapeError("scene bundle '" + dir.string() + "': mask size differs from the image");
        }
    }
    return b;
}

}  // namespace hoiedit
