#pragma once

// Scene bundle directory: image.png, mask_subject.png, mask_object.png,
// mask_background.png and meta.json (labels, source interaction and the
// reference colours the mock perception backends key on).

#include "hoiedit/perception.hpp"
#include "hoiedit/scenes.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>

namespace hoiedit {

struct SceneBundle {
    Image image;
    Matrix mask_subject;
    Matrix mask_object;
    Matrix mask_background;
    HOITriplet source;  // subject, source interaction, object
    std::string background;
    EntityPalette palette;
    nlohmann::json meta;
};

SceneBundle bundle_from_scene(const Scene& scene);

void save_scene_bundle(const SceneBundle& bundle, const std::filesystem::path& dir);
// Throws LookupError naming the missing file.
SceneBundle load_scene_bundle(const std::filesystem::path& dir);

}  // namespace hoiedit
