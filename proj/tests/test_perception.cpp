#include "doctest.h"

#include "hoiedit/bundle.hpp"
#include "hoiedit/perception.hpp"

using namespace hoiedit;

namespace {

EntityPalette palette_of(const Scene& sc) {
    return {sc.spec.subject, sc.spec.object, sc.subject_color, sc.object_color, sc.background_color};
}

}  // namespace

TEST_CASE("label normalisation") {
    CHECK(normalize_label("Sit On") == "sit_on");
    CHECK(normalize_label("sit_on") == "sit_on");
    CHECK(normalize_label("  pick -  up ") == "pick_up");
    CHECK(normalize_label("Sports-Ball") == "sports_ball");
    CHECK(normalize_label("") == "");
}

TEST_CASE("mock detector reads every verb the generator can draw") {
    CounterRng rng(5);
    int scenes = 0;
    for (const EntityStyle& s : subject_styles()) {
        for (const EntityStyle& o : object_styles()) {
            for (const std::string& v : scene_verbs()) {
                SceneSpec spec = random_scene_spec(rng);
                spec.subject = s.word;
                spec.object = o.word;
                spec.verb = v;
                const Scene sc = render_scene(spec);
                const auto dets = MockHoiDetector().detect(sc.image, palette_of(sc));
                REQUIRE(dets.size() == 1);
                CHECK(dets[0].triplet == HOITriplet{s.word, v, o.word});
                CHECK(dets[0].confidence >= 0.5);
                CHECK(dets[0].confidence <= 1.0);
                CHECK(dets[0].subject_box == sc.subject_box);
                CHECK(dets[0].object_box == sc.object_box);
                ++scenes;
            }
        }
    }
    CHECK(scenes == 180);
}

TEST_CASE("mock detector finds nothing on a blank image") {
    CounterRng rng(2);
    const Scene sc = render_scene(random_scene_spec(rng));
    const Image blank = Image::filled(sc.image.res, sc.background_color);
    CHECK(MockHoiDetector().detect(blank, palette_of(sc)).empty());
    CHECK_FALSE(MockObjectDetector().locate(blank, sc.spec.subject, palette_of(sc)).has_value());
}

TEST_CASE("interaction geometry") {
    const Box s{10, 10, 15, 22};
    CHECK(classify_interaction(s, Box{15, 10, 19, 14}) == "hold");
    CHECK(classify_interaction(s, Box{16, 18, 20, 22}) == "kick");
    CHECK(classify_interaction(s, Box{4, 10, 10, 14}) == "feed");
    CHECK(classify_interaction(s, Box{3, 17, 9, 22}) == "walk");
    CHECK(classify_interaction(s, Box{8, 22, 18, 29}) == "ride");
    CHECK(classify_interaction(s, Box{8, 3, 18, 10}) == "carry");
    CHECK(classify_interaction(s, Box{8, 0, 18, 5}) == "");
    CHECK(classify_interaction(s, Box{25, 18, 29, 22}) == "");
}

TEST_CASE("object detector and segmenter recover the rendered entities") {
    CounterRng rng(11);
    for (int k = 0; k < 30; ++k) {
        const Scene sc = render_scene(random_scene_spec(rng));
        const EntityPalette p = palette_of(sc);
        const auto sbox = MockObjectDetector().locate(sc.image, sc.spec.subject, p);
        const auto obox = MockObjectDetector().locate(sc.image, sc.spec.object, p);
        REQUIRE(sbox.has_value());
        REQUIRE(obox.has_value());
        CHECK(*sbox == sc.subject_box);
        CHECK(*obox == sc.object_box);
        CHECK(MockSegmenter().segment(sc.image, *sbox) == sc.mask_subject);
        CHECK(MockSegmenter().segment(sc.image, *obox) == sc.mask_object);
        CHECK_FALSE(MockObjectDetector().locate(sc.image, "zebra", p).has_value());
    }
}

TEST_CASE("mock embedder is deterministic and separates entities") {
    CounterRng rng(3);
    const Scene sc = render_scene(random_scene_spec(rng));
    const MockEmbedder e;
    CHECK(e.dim() == 16);
    const Eigen::VectorXd a = e.embed(sc.image, sc.mask_subject);
    CHECK(a.size() == 16);
    CHECK(a == MockEmbedder().embed(sc.image, sc.mask_subject));
    const Eigen::VectorXd b = e.embed(sc.image, sc.mask_object);
    CHECK(a.dot(b) / (a.norm() * b.norm()) < 0.9);
    CHECK(e.embed(sc.image, Matrix::Zero(sc.image.res, sc.image.res)).norm() == 0.0);
}

TEST_CASE("scene bundles round-trip through disk") {
    CounterRng rng(8);
    const Scene sc = render_scene(random_scene_spec(rng));
    const SceneBundle b = bundle_from_scene(sc);
    const auto dir = std::filesystem::temp_directory_path() / "hoiedit_bundle_test";
    std::filesystem::remove_all(dir);
    save_scene_bundle(b, dir);
    const SceneBundle back = load_scene_bundle(dir);
    CHECK(back.source == b.source);
    CHECK(back.background == b.background);
    CHECK(back.mask_subject == b.mask_subject);
    CHECK(back.mask_object == b.mask_object);
    CHECK((back.image.pixels - b.image.pixels).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);

    std::filesystem::remove(dir / "mask_object.png");
    try {
        load_scene_bundle(dir);
        FAIL("expected a lookup error");
    } catch (const LookupError& e) {
        CHECK(std::string(e.what()).find("mask_object.png") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
