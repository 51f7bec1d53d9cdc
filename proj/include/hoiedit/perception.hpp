#pragma once

// Perception backends for scoring edits: an HOI detector, an object detector,
// a box-prompted segmenter and a region embedder. The interfaces are what the
// harness depends on; the mock implementations here work on the procedural
// scenes and are keyed to the colours recorded in each scene's metadata.

#include "hoiedit/scenes.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hoiedit {

struct HOITriplet {
    std::string subject;
    std::string interaction;
    std::string object;

    bool operator==(const HOITriplet&) const = default;
};

// Lowercase, runs of spaces / hyphens / underscores collapsed to one '_'.
std::string normalize_label(const std::string& label);

struct Detection {
    HOITriplet triplet;
    Box subject_box;
    Box object_box;
    double confidence = 0.0;
};

// Reference appearance of the entities of one benchmark instance.
struct EntityPalette {
    std::string subject_label;
    std::string object_label;
    Rgb subject_color{};
    Rgb object_color{};
    Rgb background_color{};
};

class HoiDetector {
public:
    virtual ~HoiDetector() = default;
    virtual std::vector<Detection> detect(const Image& img, const EntityPalette& palette) const = 0;
};

class ObjectDetector {
public:
    virtual ~ObjectDetector() = default;
    virtual std::optional<Box> locate(const Image& img, const std::string& label, const EntityPalette& palette) const = 0;
};

class Segmenter {
public:
    virtual ~Segmenter() = default;
    // Binary res x res mask, zero outside the box.
    virtual Matrix segment(const Image& img, const Box& box) const = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int dim() const = 0;
    virtual Eigen::VectorXd embed(const Image& img, const Matrix& mask) const = 0;
};

struct PerceptionBackends {
    std::shared_ptr<const HoiDetector> hoi_detector;
    std::shared_ptr<const ObjectDetector> object_detector;
    std::shared_ptr<const Segmenter> segmenter;
    std::shared_ptr<const Embedder> embedder;
};

// Pixels within this RGB distance of a reference colour belong to it.
inline constexpr double kMockColorTolerance = 0.25;

// Largest 4-connected component of pixels near `color`; nullopt when fewer than
// `min_pixels` match. `pixel_count` receives the component size.
std::optional<Box> largest_component(const Image& img, const Rgb& color, double tolerance, int min_pixels,
                                     int* pixel_count = nullptr);

// Geometric interaction rule for the mock detector. Returns "" when the two
// boxes are too far apart to interact.
std::string classify_interaction(const Box& subject, const Box& object);

class MockHoiDetector : public HoiDetector {
public:
    std::vector<Detection> detect(const Image& img, const EntityPalette& palette) const override;
};

class MockObjectDetector : public ObjectDetector {
public:
    std::optional<Box> locate(const Image& img, const std::string& label, const EntityPalette& palette) const override;
};

// Pixels in the box that differ from the box's border colour.
class MockSegmenter : public Segmenter {
public:
    Matrix segment(const Image& img, const Box& box) const override;
};

// Colour and shape statistics of the masked region, centred and mapped
// through a fixed random projection.
class MockEmbedder : public Embedder {
public:
    explicit MockEmbedder(int dim = 16, std::uint64_t seed = 17);
    int dim() const override { return static_cast<int>(proj_.rows()); }
    Eigen::VectorXd embed(const Image& img, const Matrix& mask) const override;

private:
    Eigen::MatrixXd proj_;
};

PerceptionBackends mock_backends();

}  // namespace hoiedit
