#include "hoiedit/bench.hpp"

#include "hoiedit/archive.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace hoiedit {

std::size_t BenchmarkManifest::pair_count() const {
    std::size_t n = 0;
    for (const BenchmarkInstance& i : instances) n += i.targets.size();
    return n;
}

nlohmann::json BenchmarkManifest::to_json() const {
    nlohmann::json insts = nlohmann::json::array();
    for (const BenchmarkInstance& i : instances) {
        insts.push_back({{"id", i.id},
                         {"source", i.source},
                         {"subject", i.triplet.subject},
                         {"interaction", i.triplet.interaction},
                         {"object", i.triplet.object},
                         {"background", i.background},
                         {"targets", i.targets}});
    }
    return {{"schema_version", kManifestSchemaVersion},
            {"name", name},
            {"object_interactions", object_interactions},
            {"instances", insts}};
}

BenchmarkManifest BenchmarkManifest::from_json(const nlohmann::json& j, std::filesystem::path root) {
    BenchmarkManifest m;
    m.root = std::move(root);
    try {
        if (j.at("schema_version").get<int>() != kManifestSchemaVersion) {
            throw FormatError("unsupported manifest schema version " + j.at("schema_version").dump());
        }
        m.name = j.value("name", "");
        m.object_interactions = j.at("object_interactions").get<std::map<std::string, std::vector<std::string>>>();
        for (const auto& e : j.at("instances")) {
            BenchmarkInstance i;
            i.id = e.at("id").get<std::string>();
            i.source = e.at("source").get<std::string>();
            i.triplet = {e.at("subject").get<std::string>(), e.at("interaction").get<std::string>(),
                         e.at("object").get<std::string>()};
            i.background = e.value("background", "");
            i.targets = e.at("targets").get<std::vector<std::string>>();
            m.instances.push_back(std::move(i));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed benchmark manifest: ") + e.what());
    }
    validate(m);
    return m;
}

void BenchmarkManifest::save(const std::filesystem::path& path) const {
    const std::string text = to_json().dump(2) + "\n";
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

BenchmarkManifest BenchmarkManifest::load(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest '" + path.string() + "' is not JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
}

void validate(const BenchmarkManifest& m) {
    std::set<std::string> ids;
    for (const BenchmarkInstance& i : m.instances) {
        if (!ids.insert(i.id).second) throw ConfigError("duplicate instance id '" + i.id + "'");
        if (i.targets.empty()) throw ConfigError("instance '" + i.id + "' has no target interactions");
        const std::string object = normalize_label(i.triplet.object);
        const std::vector<std::string>* allowed = nullptr;
        for (const auto& [obj, acts] : m.object_interactions) {
            if (normalize_label(obj) == object) allowed = &acts;
        }
        if (!allowed) throw ConfigError("instance '" + i.id + "': object '" + i.triplet.object + "' has no interaction table");
        std::set<std::string> seen;
        for (const std::string& t : i.targets) {
            const std::string n = normalize_label(t);
            if (!seen.insert(n).second) throw ConfigError("instance '" + i.id + "' repeats target '" + t + "'");
            if (n == normalize_label(i.triplet.interaction)) {
                throw ConfigError("instance '" + i.id + "': target '" + t + "' equals the source interaction");
            }
            const bool ok = std::any_of(allowed->begin(), allowed->end(),
                                        [&](const std::string& a) { return normalize_label(a) == n; });
            if (!ok) throw ConfigError("instance '" + i.id + "': '" + t + "' is not a plausible interaction with " + i.triplet.object);
        }
    }
}

double hoi_match(const std::vector<Detection>& detections, const HOITriplet& target, double threshold) {
    const std::string s = normalize_label(target.subject);
    const std::string v = normalize_label(target.interaction);
    const std::string o = normalize_label(target.object);
    for (const Detection& d : detections) {
        if (d.confidence >= threshold && normalize_label(d.triplet.subject) == s &&
            normalize_label(d.triplet.interaction) == v && normalize_label(d.triplet.object) == o) {
            return 1.0;
        }
    }
    return 0.0;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

IdentityScore identity_consistency(const Image& source, const Image& edited, const EntityPalette& palette,
                                   const PerceptionBackends& be) {
    IdentityScore out;
    double* slots[] = {&out.subject, &out.object};
    const std::string labels[] = {palette.subject_label, palette.object_label};
    for (int i = 0; i < 2; ++i) {
        const auto src_box = be.object_detector->locate(source, labels[i], palette);
        if (!src_box) {
            out.valid = false;
            return out;
        }
        const auto edit_box = be.object_detector->locate(edited, labels[i], palette);
        if (!edit_box) continue;  // floor score 0
        const Eigen::VectorXd a = be.embedder->embed(source, be.segmenter->segment(source, *src_box));
        const Eigen::VectorXd b = be.embedder->embed(edited, be.segmenter->segment(edited, *edit_box));
        *slots[i] = cosine_similarity(a, b);
    }
    out.value = 0.5 * (out.subject + out.object);
    return out;
}

double overall(double editability, double identity_consistency) {
    return 0.5 * (editability + identity_consistency);
}

EvalAggregate aggregate_cells(const std::vector<EvalCell>& cells) {
    EvalAggregate a;
    a.cells = cells.size();
    if (cells.empty()) return a;
    double e = 0.0, ic = 0.0;
    for (const EvalCell& c : cells) {
        e += c.editability;
        ic += c.identity_consistency;
    }
    a.hoi_editability = e / static_cast<double>(cells.size());
    a.identity_consistency = ic / static_cast<double>(cells.size());
    a.overall = overall(a.hoi_editability, a.identity_consistency);
    return a;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const EvalCell& c : cells) {
        cs.push_back({{"instance", c.instance},
                      {"target", c.target},
                      {"seed", c.seed},
                      {"editability", c.editability},
                      {"identity_consistency", c.identity_consistency},
                      {"config_hash", c.config_hash}});
    }
    return {{"schema_version", kReportSchemaVersion},
            {"manifest", manifest},
            {"seeds_per_pair", seeds_per_pair},
            {"complete", complete()},
            {"invalid_instances", invalid},
            {"cells", cs},
            {"aggregate",
             {{"cells", aggregate.cells},
              {"hoi_editability", aggregate.hoi_editability},
              {"identity_consistency", aggregate.identity_consistency},
              {"overall", aggregate.overall}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        if (j.at("schema_version").get<int>() != kReportSchemaVersion) throw FormatError("unsupported report schema");
        r.manifest = j.at("manifest").get<std::string>();
        r.seeds_per_pair = j.at("seeds_per_pair").get<int>();
        r.invalid = j.at("invalid_instances").get<std::map<std::string, std::string>>();
        for (const auto& c : j.at("cells")) {
            r.cells.push_back({c.at("instance").get<std::string>(), c.at("target").get<std::string>(),
                               c.at("seed").get<std::uint64_t>(), c.at("editability").get<double>(),
                               c.at("identity_consistency").get<double>(), c.at("config_hash").get<std::string>()});
        }
        const auto& a = j.at("aggregate");
        r.aggregate = {a.at("cells").get<std::size_t>(), a.at("hoi_editability").get<double>(),
                       a.at("identity_consistency").get<double>(), a.at("overall").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string EvalReport::to_csv(const std::string& method) const {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "method,overall,hoi_editability,identity_consistency\n";
    os << method << "," << aggregate.overall << "," << aggregate.hoi_editability << ","
       << aggregate.identity_consistency << "\n";
    return os.str();
}

EvalReport run_benchmark(const BenchmarkManifest& manifest, const EditFn& editor, const PerceptionBackends& be,
                         const BenchOptions& opts) {
    if (opts.seeds_per_pair < 1) throw ConfigError("seeds_per_pair must be at least 1");
    EvalReport report;
    report.manifest = manifest.name;
    report.seeds_per_pair = opts.seeds_per_pair;
    for (const BenchmarkInstance& inst : manifest.instances) {
        std::vector<EvalCell> cells;
        try {
            const SceneBundle src = load_scene_bundle(manifest.source_dir(inst));
            EntityPalette palette = src.palette;
            palette.subject_label = inst.triplet.subject;
            palette.object_label = inst.triplet.object;
            if (!identity_consistency(src.image, src.image, palette, be).valid) {
                report.invalid[inst.id] = "subject or object not found in the source image";
                continue;
            }
            const std::string hash = opts.config_hash ? opts.config_hash(inst) : "";
            for (const std::string& target : inst.targets) {
                const HOITriplet want{inst.triplet.subject, target, inst.triplet.object};
                for (int k = 0; k < opts.seeds_per_pair; ++k) {
                    const std::uint64_t seed = opts.first_seed + static_cast<std::uint64_t>(k);
                    const Image img = editor(inst, src, target, seed);
                    EvalCell c;
                    c.instance = inst.id;
                    c.target = target;
                    c.seed = seed;
                    c.editability = hoi_match(be.hoi_detector->detect(img, palette), want, opts.threshold);
                    c.identity_consistency = identity_consistency(src.image, img, palette, be).value;
                    c.config_hash = hash;
                    cells.push_back(std::move(c));
                }
            }
        } catch (const std::exception& e) {
            report.invalid[inst.id] = e.what();
            continue;
        }
        report.cells.insert(report.cells.end(), cells.begin(), cells.end());
    }
    report.aggregate = aggregate_cells(report.cells);
    return report;
}

BenchmarkManifest make_fixture_benchmark(const std::filesystem::path& dir, int n_scenes, int targets,
                                         std::uint64_t seed) {
    const auto& verbs = scene_verbs();
    if (n_scenes < 1 || targets < 1 || targets >= static_cast<int>(verbs.size())) {
        throw ConfigError("fixture benchmark needs at least one scene and 1.." + std::to_string(verbs.size() - 1) +
                          " targets");
    }
    BenchmarkManifest m;
    m.name = "toy-fixture";
    m.root = dir;
    for (const EntityStyle& o : object_styles()) m.object_interactions[o.word] = verbs;
    CounterRng rng(seed);
    for (int k = 0; k < n_scenes; ++k) {
        SceneSpec spec = random_scene_spec(rng);
        // Cycle the source interactions so every verb appears as a source.
        spec.verb = verbs[static_cast<std::size_t>(k) % verbs.size()];
        const Scene sc = render_scene(spec);
        std::ostringstream id;
        id << "s" << std::setw(2) << std::setfill('0') << k;
        save_scene_bundle(bundle_from_scene(sc), dir / "scenes" / id.str());

        std::vector<std::string> pool;
        for (const std::string& v : verbs) {
            if (v != spec.verb) pool.push_back(v);
        }
        for (std::size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[rng.below(i + 1)]);
        pool.resize(static_cast<std::size_t>(targets));
        m.instances.push_back({id.str(), "scenes/" + id.str(), {spec.subject, spec.verb, spec.object}, spec.background, pool});
    }
    validate(m);
    m.save(dir / "manifest.json");
    return m;
}

}  // namespace hoiedit
