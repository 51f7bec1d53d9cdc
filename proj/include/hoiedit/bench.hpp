#pragma once

// Edit-quality benchmark: for every (source, target interaction) pair and
// seed, an edited image is scored for HOI editability (does a detector find
// the target triplet?) and identity consistency (do the subject and object
// still look the same?). Overall = the mean of the two.

#include "hoiedit/bundle.hpp"
#include "hoiedit/perception.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace hoiedit {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

struct BenchmarkInstance {
    std::string id;
    std::string source;  // scene bundle directory, relative to the manifest
    HOITriplet triplet;  // source subject, interaction, object
    std::string background;
    std::vector<std::string> targets;
};

struct BenchmarkManifest {
    std::string name;
    // Plausible target interactions per object label.
    std::map<std::string, std::vector<std::string>> object_interactions;
    std::vector<BenchmarkInstance> instances;
    std::filesystem::path root;  // directory holding the manifest

    std::size_t pair_count() const;
    std::filesystem::path source_dir(const BenchmarkInstance& inst) const { return root / inst.source; }

    nlohmann::json to_json() const;
    static BenchmarkManifest from_json(const nlohmann::json& j, std::filesystem::path root = {});
    void save(const std::filesystem::path& path) const;
    static BenchmarkManifest load(const std::filesystem::path& path);
};

// Throws ConfigError for duplicate ids, empty target lists, targets equal to
// the source interaction or targets the object table does not allow.
void validate(const BenchmarkManifest& m);

// 1.0 iff some detection at or above the threshold names the target triplet
// (labels compared after normalize_label).
double hoi_match(const std::vector<Detection>& detections, const HOITriplet& target, double threshold = 0.5);

struct IdentityScore {
    bool valid = true;  // false when an entity is not found in the source image
    double subject = 0.0;
    double object = 0.0;
    double value = 0.0;  // mean of subject and object cosines
};

// Locate each entity by label, segment inside its box, embed and compare by
// cosine. An entity missing from the edited image scores 0.
IdentityScore identity_consistency(const Image& source, const Image& edited, const EntityPalette& palette,
                                   const PerceptionBackends& backends);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

double overall(double editability, double identity_consistency);

struct EvalCell {
    std::string instance;
    std::string target;
    std::uint64_t seed = 0;
    double editability = 0.0;
    double identity_consistency = 0.0;
    std::string config_hash;
};

struct EvalAggregate {
    std::size_t cells = 0;
    double hoi_editability = 0.0;
    double identity_consistency = 0.0;
    double overall = 0.0;
};

EvalAggregate aggregate_cells(const std::vector<EvalCell>& cells);

struct EvalReport {
    std::string manifest;
    int seeds_per_pair = 0;
    std::vector<EvalCell> cells;
    std::map<std::string, std::string> invalid;  // instance id -> reason
    EvalAggregate aggregate;

    bool complete() const { return invalid.empty(); }
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    // Header plus one row: method,overall,hoi_editability,identity_consistency
    std::string to_csv(const std::string& method) const;
};

// Produces the edited image for one instance, target interaction and seed.
using EditFn =
    std::function<Image(const BenchmarkInstance& inst, const SceneBundle& source, const std::string& target, std::uint64_t seed)>;

struct BenchOptions {
    int seeds_per_pair = 10;
    std::uint64_t first_seed = 0;
    double threshold = 0.5;
    // Provenance recorded with every cell.
    std::function<std::string(const BenchmarkInstance&)> config_hash;
};

// Invalid instances (unreadable source, entity not found in the source, editor
// failure) are recorded in the report and excluded from the aggregate.
EvalReport run_benchmark(const BenchmarkManifest& manifest, const EditFn& editor, const PerceptionBackends& backends,
                         const BenchOptions& opts = {});

// Writes `n_scenes` procedural scene bundles plus manifest.json under dir;
// each source gets `targets` target interactions other than its own.
BenchmarkManifest make_fixture_benchmark(const std::filesystem::path& dir, int n_scenes = 8, int targets = 3,
                                         std::uint64_t seed = 1);

}  // namespace hoiedit
