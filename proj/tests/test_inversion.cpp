#include "doctest.h"
#include "test_util.hpp"

#include "hoiedit/inversion.hpp"

#include <nlohmann/json.hpp>

using namespace hoiedit;
using testutil::random_matrix;

namespace {

// Full image geometry with very narrow layers.
DenoiserConfig micro_config() {
    DenoiserConfig c;
    c.base_width = 8;
    c.mid_width = 16;
    c.d_text = 8;
    c.time_dim = 8;
    return c;
}

TrainConfig short_run() {
    TrainConfig c;
    c.stage1_steps = 12;
    c.stage2_steps = 6;
    c.stage1_lr = 5e-2;
    c.stage2_lr = 1e-2;
    c.seed = 3;
    return c;
}

SceneBundle fixture_scene(std::uint64_t seed = 4) {
    CounterRng rng(seed);
    return bundle_from_scene(render_scene(random_scene_spec(rng)));
}

ConceptSet three_concepts() {
    const Vocabulary& v = Vocabulary::toy();
    ConceptSet s;
    s.clues = {{"subject", v.concept_id("<s*>"), {}, {}},
               {"object", v.concept_id("<o*>"), {}, {}},
               {"background", v.concept_id("<bg*>"), {}, {}}};
    return s;
}

}  // namespace

TEST_CASE("training defaults") {
    const TrainConfig c;
    CHECK(c.stage1_steps == 1000);
    CHECK(c.stage1_lr == 5e-4);
    CHECK(c.stage2_steps == 200);
    CHECK(c.stage2_lr == 1e-4);
    CHECK(c.lambda_attn == 0.01);
    CHECK(c.ablation.disassembly);
    CHECK(c.ablation.sft);
    CHECK(c.ablation.lora);
    CHECK_FALSE(c.policy().cross_attn.q);
    CHECK(c.policy().cross_attn.k);
    CHECK(c.policy().self_attn.v);
}

TEST_CASE("training config JSON") {
    TrainConfig c = short_run();
    c.rank_k = 2;
    c.ablation = ablation_preset("no_sft_lora");
    CHECK(train_config_from_json(to_json(c)) == c);
    CHECK(train_config_from_json(nlohmann::json{{"stage2_steps", 7}}).stage2_steps == 7);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"stage3_steps", 7}}), ConfigError);
    CHECK_THROWS_AS(ablation_preset("w/o everything"), ConfigError);

    // The hash is taken over a canonical dump, so key order does not matter.
    nlohmann::json a = to_json(c);
    nlohmann::ordered_json reordered;
    std::vector<std::string> keys;
    for (auto it = a.begin(); it != a.end(); ++it) keys.push_back(it.key());
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) reordered[*it] = a[*it];
    CHECK(config_hash(nlohmann::json::parse(reordered.dump())) == config_hash(a));

    TrainConfig bad;
    bad.rank_k = 0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = TrainConfig{};
    bad.lambda_attn = -1;
    CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("ablation presets") {
    CHECK(ablation_preset_names().size() == 6);
    CHECK(ablation_preset("full") == AblationFlags{true, true, true});
    CHECK(ablation_preset("no_disassembly") == AblationFlags{false, true, true});
    CHECK(ablation_preset("no_sft") == AblationFlags{true, false, true});
    CHECK(ablation_preset("no_lora") == AblationFlags{true, true, false});
    CHECK(ablation_preset("no_sft_lora") == AblationFlags{true, false, false});
    CHECK(ablation_preset("baseline") == AblationFlags{false, false, false});
}

TEST_CASE("concept subsets are uniform over non-empty subsets") {
    CounterRng rng(77);
    const int draws = 7000;
    std::map<std::vector<int>, int> counts;
    for (int i = 0; i < draws; ++i) {
        const auto s = sample_concept_subset(3, rng);
        REQUIRE_FALSE(s.empty());
        REQUIRE(std::is_sorted(s.begin(), s.end()));
        ++counts[s];
    }
    CHECK(counts.size() == 7);
    const double p = 1.0 / 7.0;
    const double sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [s, n] : counts) CHECK(std::abs(n - draws * p) <= 3 * sigma);

    CounterRng one(1);
    for (int i = 0; i < 20; ++i) CHECK(sample_concept_subset(1, one) == std::vector<int>{0});
    CHECK_THROWS_AS(sample_concept_subset(0, one), ConfigError);
}

TEST_CASE("source prompt templates") {
    const ConceptSet s = three_concepts();
    CHECK(source_prompt(s, {0}) == "a photo of <s*>");
    CHECK(source_prompt(s, {1}) == "a photo of <o*>");
    CHECK(source_prompt(s, {2}) == "a photo of <bg*>");
    CHECK(source_prompt(s, {0, 1}) == "a photo of <s*> and <o*>");
    CHECK(source_prompt(s, {0, 2}) == "a photo of <s*> and <bg*>");
    CHECK(source_prompt(s, {1, 2}) == "a photo of <o*> and <bg*>");
    CHECK(source_prompt(s, {0, 1, 2}) == "a photo of <s*> and <o*> at <bg*>");
    CHECK(source_prompt(s, {0, 1, 2}, "ride") == "a photo of <s*> ride <o*> at <bg*>");
    CHECK(source_prompt(s, {0, 1}, "ride") == "a photo of <s*> ride <o*>");
    CHECK(source_prompt(s, {0, 2}, "ride") == "a photo of <s*> and <bg*>");
    // Every template tokenizes.
    for (const auto& sub : std::vector<std::vector<int>>{{0}, {1}, {2}, {0, 1}, {0, 2}, {1, 2}, {0, 1, 2}}) {
        CHECK_NOTHROW(PromptSequence::parse(source_prompt(s, sub)));
    }
}

TEST_CASE("mask downsampling") {
    Matrix m = Matrix::Zero(8, 8);
    m.block(0, 0, 4, 4).setOnes();
    Matrix want = Matrix::Zero(2, 2);
    want(0, 0) = 1;
    CHECK(downsample_mask(m, 2) == want);
    // A sliver below half coverage everywhere keeps its best cell.
    Matrix thin = Matrix::Zero(8, 8);
    thin(5, 6) = 1;
    thin(5, 7) = 1;
    Matrix best = Matrix::Zero(2, 2);
    best(1, 1) = 1;
    CHECK(downsample_mask(thin, 2) == best);
    CHECK_THROWS_AS(downsample_mask(m, 3), ShapeError);
}

TEST_CASE("masked reconstruction loss") {
    const Matrix eps = random_matrix(16, 3, 1), hat = random_matrix(16, 3, 2);
    Matrix mask = Matrix::Zero(4, 4);
    mask(0, 1) = mask(2, 3) = mask(3, 3) = 1;
    double sum = 0;
    int n = 0;
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            if (mask(y, x) == 0) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = eps(y * 4 + x, c) - hat(y * 4 + x, c);
                sum += d * d;
                ++n;
            }
        }
    }
    CHECK(masked_reconstruction_loss(eps, hat, mask) == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(masked_reconstruction_loss(eps, eps, mask) == 0.0);
    CHECK_THROWS_AS(masked_reconstruction_loss(eps, hat, Matrix::Zero(4, 4)), ConfigError);

    // Gradient with respect to the prediction vanishes outside the mask and
    // matches the closed form inside it.
    ad::Tape tape;
    ad::Var h = tape.leaf(hat);
    ad::Var l = masked_reconstruction_loss(h, eps, mask);
    CHECK(l.value()(0, 0) == doctest::Approx(sum / n).epsilon(1e-12));
    tape.backward(l);
    const Matrix g = tape.grad(h);
    for (int i = 0; i < 16; ++i) {
        for (int c = 0; c < 3; ++c) {
            if (mask.data()[i] == 0) CHECK(g(i, c) == 0.0);
            else CHECK(g(i, c) == doctest::Approx(2.0 * (hat(i, c) - eps(i, c)) / n));
        }
    }
}

TEST_CASE("attention alignment loss") {
    CHECK(attention_alignment_loss({Matrix::Ones(4, 4)}, {Matrix::Zero(4, 4)}) == 1.0);
    CHECK(attention_alignment_loss({Matrix::Ones(4, 4), Matrix::Ones(4, 4)}, {Matrix::Zero(4, 4), Matrix::Ones(4, 4)}) ==
          0.5);
    CHECK_THROWS_AS(attention_alignment_loss({Matrix::Ones(4, 4)}, {Matrix::Zero(2, 2)}), ShapeError);

    const Matrix mask = (random_matrix(4, 4, 5).array() > 0).cast<double>().matrix();
    const Matrix map = random_matrix(4, 4, 6, 0.3);
    ad::Tape tape;
    ad::Var v = tape.leaf(map);
    ad::Var l = attention_alignment_loss(std::vector<ad::Var>{v}, {mask});
    CHECK(l.value()(0, 0) == doctest::Approx(attention_alignment_loss({map}, {mask})).epsilon(1e-12));
    tape.backward(l);
    const Matrix num = testutil::numeric_grad([&](const Matrix& m) { return attention_alignment_loss({m}, {mask}); }, map);
    CHECK(testutil::max_rel_err(tape.grad(v), num) < 1e-6);
}

TEST_CASE("total loss") {
    CHECK(total_loss(0.5, 2.0, 0.01) == doctest::Approx(0.52).epsilon(1e-12));
    CHECK(total_loss(0.5, 2.0) == doctest::Approx(0.52).epsilon(1e-12));
    CHECK(total_loss(0.5, 2.0, 0.0) == 0.5);
    CHECK_THROWS_AS(total_loss(0.5, 2.0, -0.1), ConfigError);
}

TEST_CASE("trainable parameter counts") {
    const DenoiserConfig d = micro_config();
    TrainConfig c;
    CHECK(trainable_parameter_count(d, c, 1) == 3 * d.d_text);
    const long full = trainable_parameter_count(d, c, 2);
    CHECK(full > trainable_parameter_count(d, c, 1));
    TrainConfig wider = c;
    wider.rank_k = wider.rank_v = 6;
    CHECK(trainable_parameter_count(d, wider, 2) > full);
    TrainConfig no_sft = c;
    no_sft.ablation.sft = false;
    CHECK(trainable_parameter_count(d, no_sft, 2) > full);
    TrainConfig dense = c;
    dense.ablation.lora = false;
    CHECK(trainable_parameter_count(d, dense, 2) > full);
    TrainConfig merged = c;
    merged.ablation.disassembly = false;
    CHECK(trainable_parameter_count(d, merged, 1) == d.d_text);
}

TEST_CASE("concept initialisation") {
    const Denoiser base = Denoiser::initialize(micro_config(), 1);
    const SceneBundle src = fixture_scene();
    const ConceptSet split = make_concepts(base, src, true);
    REQUIRE(split.size() == 3);
    const Vocabulary& v = Vocabulary::toy();
    CHECK(split.clues[0].embedding == base.text_table().row(v.id(src.source.subject)));
    CHECK(split.clues[1].embedding == base.text_table().row(v.id(src.source.object)));
    CHECK(split.clues[2].embedding == base.text_table().row(v.id(src.background)));
    CHECK(split.clues[0].mask == src.mask_subject);
    const ConceptSet merged = make_concepts(base, src, false);
    REQUIRE(merged.size() == 1);
    CHECK(merged.clues[0].token_id == v.concept_id("<c*>"));
    CHECK(merged.clues[0].mask.sum() == src.image.res * src.image.res);
}

TEST_CASE("inversion on a micro model") {
    Denoiser base = Denoiser::initialize(micro_config(), 1);
    const std::string pristine = base_checksum(base);
    const SceneBundle src = fixture_scene();
    const TrainConfig cfg = short_run();

    std::vector<std::pair<std::string, Matrix>> init_adapters, stage1_adapters;
    std::vector<Matrix> init_concepts, stage1_concepts;
    std::vector<Matrix> q_weights;
    InversionHooks hooks;
    hooks.on_phase = [&](const std::string& phase, const InversionState& s) {
        if (phase == "stage2") return;
        auto& ad = phase == "init" ? init_adapters : stage1_adapters;
        auto& cc = phase == "init" ? init_concepts : stage1_concepts;
        for (const ConceptClue& c : s.concepts->clues) cc.push_back(c.embedding);
        Denoiser copy = *s.model;
        for (AttentionLayer* l : copy.attention_layers()) {
            for (const ParamRef& p : trainable_parameters(*l, cfg.policy())) ad.emplace_back(p.name, *p.value);
        }
    };
    const InversionResult r = invert(base, src, cfg, hooks);
    CHECK(base_checksum(base) == pristine);
    CHECK(r.history.size() == 18);
    CHECK(r.history.front().stage == 1);
    CHECK(r.history.back().stage == 2);

    SUBCASE("stage 1 leaves adapters at their initial values and moves the concepts") {
        REQUIRE(init_adapters.size() == stage1_adapters.size());
        REQUIRE_FALSE(init_adapters.empty());
        for (std::size_t i = 0; i < init_adapters.size(); ++i) CHECK(init_adapters[i].second == stage1_adapters[i].second);
        for (std::size_t i = 0; i < init_concepts.size(); ++i) CHECK((init_concepts[i] - stage1_concepts[i]).norm() > 0);
        // Stage 2 does move them.
        bool moved = false;
        for (std::size_t i = 0; i < init_adapters.size(); ++i) moved |= !(r.artifact.adapters[i].second == init_adapters[i].second);
        CHECK(moved);
    }
    SUBCASE("artifact layout") {
        const TensorArchive a = r.artifact.to_archive();
        CHECK(a.names_with_prefix("concept.").size() == 3);
        // K and V factor pairs on six attention layers, no Q.
        CHECK(a.tensors().size() == 3 + 4 * 6);
        for (const auto& [name, m] : r.artifact.adapters) CHECK(name.find("to_q") == std::string::npos);
        long n = 0;
        for (const auto& c : r.artifact.concepts) n += c.embedding.size();
        for (const auto& [name, m] : r.artifact.adapters) n += m.size();
        CHECK(n == trainable_parameter_count(base.config(), cfg, 2));
    }
    SUBCASE("same seed, same bytes") {
        const InversionResult again = invert(base, src, cfg);
        CHECK(again.artifact.to_archive().serialize() == r.artifact.to_archive().serialize());
    }
    SUBCASE("archive round trip") {
        const auto bytes = r.artifact.to_archive().serialize();
        const InversionArtifact back = InversionArtifact::from_archive(TensorArchive::deserialize(bytes));
        CHECK(back.to_archive().serialize() == bytes);
        CHECK(back.config_hash() == r.artifact.config_hash());
        CHECK(back.source == src.source);
    }
    SUBCASE("attaching to another base") {
        Denoiser other = Denoiser::initialize(micro_config(), 2);
        CHECK_THROWS_AS(r.artifact.apply(other), IncompatibleError);
        CHECK_NOTHROW(r.artifact.apply(other, true));
        DenoiserConfig wide = micro_config();
        wide.base_width = 16;
        Denoiser wrong = Denoiser::initialize(wide, 1);
        CHECK_THROWS_AS(r.artifact.apply(wrong, true), IncompatibleError);
        Denoiser same = base;
        r.artifact.apply(same);
        CHECK(same.has_adapters());
        CHECK(base_checksum(same) == pristine);
    }
}

TEST_CASE("inversion without disassembly learns one concept") {
    const Denoiser base = Denoiser::initialize(micro_config(), 1);
    TrainConfig cfg = short_run();
    cfg.ablation = ablation_preset("baseline");
    const InversionResult r = invert(base, fixture_scene(), cfg);
    REQUIRE(r.artifact.concepts.size() == 1);
    CHECK(r.artifact.concepts[0].label == "scene");
    const TensorArchive a = r.artifact.to_archive();
    CHECK(a.names_with_prefix("concept.").size() == 1);
    // Dense Q, K and V deltas on every layer.
    CHECK(a.tensors().size() == 1 + 3 * 6);
    for (const auto& [name, m] : r.artifact.adapters) CHECK(name.ends_with(".delta"));
}
