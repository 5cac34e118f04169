#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "gelato/toy_data.hpp"

using namespace gelato;

namespace {

const ModelConfig kCfg = ModelConfig::toy();

ParamSet scalar_param(double p, bool trainable = true) {
    ParamSet ps;
    ps.add("p", Tensor::vec({p}), trainable);
    return ps;
}

GradStore scalar_grad(double g) { return {{"p", Tensor::vec({g})}}; }

MixtureSpec latent_mix(std::size_t n = 512, std::uint64_t seed = 7) {
    LatentViewSpec spec;
    spec.seed = seed;
    MixtureSpec mix;
    mix.add(share(make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, n, spec)), 1.0);
    return mix;
}

TrainConfig quick_config(std::size_t steps, std::size_t batch = 4) {
    TrainConfig c;
    c.steps = steps;
    c.batch_size = batch;
    c.lr_max = 1e-3;
    c.warmup_steps = 10;
    c.seed = 5;
    c.check_interval = 10;
    return c;
}

double mean_loss(const LossTrace& tr, std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += tr[i].loss;
    return s / double(end - begin);
}

bool starts(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

class Trainer : public ::testing::Test {
protected:
    static void SetUpTestSuite() { pkg = new ModelPackage(build_package(kCfg, 31)); }
    static void TearDownTestSuite() { delete pkg; }
    static ModelBundle omni(TaskVariant t = TaskVariant::retrieval) { return assemble_bundle(*pkg, t, Modality::omni); }
    static ModelPackage* pkg;
};
ModelPackage* Trainer::pkg = nullptr;

} // namespace

TEST(LrSchedule, WarmupValues) {
    EXPECT_DOUBLE_EQ(lr_at(0, 2e-4, 500), 4e-7);
    EXPECT_DOUBLE_EQ(lr_at(499, 2e-4, 500), 2e-4);
    EXPECT_DOUBLE_EQ(lr_at(10000, 2e-4, 500), 2e-4);
    const TrainConfig defaults;
    EXPECT_EQ(lr_at(0, defaults), lr_at(0, 2e-4, 500));
}

TEST(LrSchedule, MonotoneAndContinuous) {
    double prev = 0.0;
    for (std::size_t s = 0; s < 1200; ++s) {
        const double lr = lr_at(s, 2e-4, 500);
        EXPECT_GE(lr, prev);
        prev = lr;
    }
    EXPECT_EQ(lr_at(499, 2e-4, 500), lr_at(500, 2e-4, 500));
}

TEST(TrainDefaults, MatchRecipe) {
    const TrainConfig c;
    EXPECT_EQ(c.lr_max, 2e-4);
    EXPECT_EQ(c.warmup_steps, 500u);
    EXPECT_EQ(c.beta1, 0.9);
    EXPECT_EQ(c.beta2, 0.999);
    EXPECT_EQ(c.weight_decay, 0.01);
    EXPECT_EQ(c.max_grad_norm, 1.0);
    EXPECT_EQ(c.tau, 0.02);
    EXPECT_EQ(c.batch_size, 256u);
    EXPECT_EQ(c.steps, 15000u);
}

TEST(AdamW, OneStepUnitGradient) {
    TrainConfig c;
    c.weight_decay = 0.0;
    ParamSet ps = scalar_param(0.0);
    OptState st;
    adamw_step({&ps}, scalar_grad(1.0), st, 0.1, c);
    EXPECT_NEAR(ps.get("p")[0], -0.1, 1e-9);
    EXPECT_EQ(st.t, 1u);
}

TEST(AdamW, TwoStepsByHand) {
    // g = 1 then -1, wd = 0: m2 = -0.01, v2 = 0.001999, bias corrections
    // 0.19 and 0.001999, so the second update is +0.1 * (0.01/0.19) / (1 + eps).
    TrainConfig c;
    c.weight_decay = 0.0;
    ParamSet ps = scalar_param(0.0);
    OptState st;
    adamw_step({&ps}, scalar_grad(1.0), st, 0.1, c);
    adamw_step({&ps}, scalar_grad(-1.0), st, 0.1, c);
    const double expected = -0.1 / (1.0 + 1e-8) + 0.1 * (0.01 / 0.19) / (1.0 + 1e-8);
    EXPECT_NEAR(ps.get("p")[0], expected, 1e-12);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
    TrainConfig c;
    ParamSet ps = scalar_param(3.0);
    OptState st;
    adamw_step({&ps}, scalar_grad(0.0), st, 0.1, c);
    EXPECT_NEAR(ps.get("p")[0], 3.0 * (1.0 - 0.1 * 0.01), 1e-15);
}

TEST(AdamW, FrozenUntouchedOverManySteps) {
    ParamSet ps;
    ps.add("frozen", gaussian_tensor({3, 3}, 1.0, 1), false);
    ps.add("train", gaussian_tensor({3, 3}, 1.0, 2), true);
    const std::string before = tensor_sha256(ps.get("frozen"));
    const std::string train_before = tensor_sha256(ps.get("train"));
    OptState st;
    TrainConfig c;
    for (std::uint64_t i = 0; i < 100; ++i) adamw_step({&ps}, {{"train", gaussian_tensor({3, 3}, 1.0, 10 + i)}}, st, 1e-2, c);
    EXPECT_EQ(tensor_sha256(ps.get("frozen")), before);
    EXPECT_NE(tensor_sha256(ps.get("train")), train_before);
    EXPECT_EQ(st.m.at("train").shape(), (Shape{3, 3}));
    EXPECT_FALSE(st.m.count("frozen"));
}

TEST(AdamW, GradientCoverageChecked) {
    ParamSet ps;
    ps.add("frozen", Tensor({2}, 1.0), false);
    ps.add("train", Tensor({2}, 1.0), true);
    TrainConfig c;
    OptState st;
    EXPECT_THROW(adamw_step({&ps}, {{"train", Tensor({3}, 1.0)}}, st, 0.1, c), DimensionError);
    EXPECT_THROW(adamw_step({&ps}, {}, st, 0.1, c), DimensionError);
    EXPECT_THROW(adamw_step({&ps}, {{"train", Tensor({2}, 1.0)}, {"frozen", Tensor({2}, 1.0)}}, st, 0.1, c),
                 DimensionError);
    EXPECT_EQ(st.t, 0u);
}

TEST(Sampling, SingleSourceWithoutReplacement) {
    MixtureSpec mix = latent_mix(40);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto b = sample_batch(mix, rng, 16);
        EXPECT_EQ(b.source, 0u);
        ASSERT_EQ(b.indices.size(), 16u);
        EXPECT_EQ(std::set<std::size_t>(b.indices.begin(), b.indices.end()).size(), 16u);
        for (auto idx : b.indices) EXPECT_LT(idx, 40u);
    }
}

TEST(Sampling, SmallSourceFallsBackToReplacement) {
    MixtureSpec mix = latent_mix(3);
    std::mt19937_64 rng(1);
    const auto b = sample_batch(mix, rng, 8);
    ASSERT_EQ(b.indices.size(), 8u);
    for (auto idx : b.indices) EXPECT_LT(idx, 3u);
}

TEST(Sampling, MixtureFrequencies) {
    auto data = share(make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, 8, {}));
    MixtureSpec mix;
    mix.add(data, 3.0);
    mix.add(data, 1.0);
    mix.add(data, 0.0);
    std::mt19937_64 rng(2);
    std::vector<std::size_t> counts(3, 0);
    for (int i = 0; i < 10000; ++i) ++counts[sample_batch(mix, rng, 4).source];
    EXPECT_NEAR(double(counts[0]) / 10000.0, 0.75, 0.02);
    EXPECT_NEAR(double(counts[1]) / 10000.0, 0.25, 0.02);
    EXPECT_EQ(counts[2], 0u);
}

TEST(Sampling, BadMixturesRejected) {
    std::mt19937_64 rng(3);
    EXPECT_THROW(sample_batch(MixtureSpec{}, rng, 4), ConfigError);
    auto data = share(make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, 8, {}));
    MixtureSpec zero;
    zero.add(data, 0.0);
    EXPECT_THROW(sample_batch(zero, rng, 4), ConfigError);
    MixtureSpec negative;
    negative.add(data, -1.0);
    negative.add(data, 2.0);
    EXPECT_THROW(sample_batch(negative, rng, 4), ConfigError);
}

TEST_F(Trainer, ScopeSelectsListedParameters) {
    auto b = omni();
    apply_scope(b, {FreezeScope::Kind::projector_only, {}});
    const auto names = trainable_names(b);
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()),
              (std::set<std::string>{"delim.audio_end", "delim.audio_start", "delim.vision_end", "delim.vision_start",
                                     "fc_audio.b", "fc_audio.w", "fc_vision_2.b", "fc_vision_2.w"}));
    apply_scope(b, {FreezeScope::Kind::audio_projector_only, {}});
    for (const auto& n : trainable_names(b)) EXPECT_TRUE(starts(n, "fc_audio.") || starts(n, "delim.audio_")) << n;
    apply_scope(b, {FreezeScope::Kind::projector_plus_fc1, {}});
    const auto fc1 = trainable_names(b);
    EXPECT_TRUE(std::count(fc1.begin(), fc1.end(), names::kFc1W));
    EXPECT_FALSE(std::count(fc1.begin(), fc1.end(), names::kMergeGamma));
    apply_scope(b, FreezeScope::custom({"fc_audio.w"}));
    EXPECT_EQ(trainable_names(b), std::vector<std::string>{"fc_audio.w"});
    EXPECT_THROW(apply_scope(b, FreezeScope::custom({"nothing.*"})), ConfigError);
}

TEST_F(Trainer, NanoProfileKeepsVisionDelimitersFrozen) {
    auto cfg = kCfg;
    cfg.profile = Profile::nano;
    auto b = assemble_bundle(build_package(cfg, 3, {TaskVariant::retrieval}), TaskVariant::retrieval, Modality::omni);
    apply_scope(b, {FreezeScope::Kind::projector_only, {}});
    for (const auto& n : trainable_names(b)) EXPECT_FALSE(starts(n, "delim.vision_")) << n;
}

TEST_F(Trainer, ScopeStringsRoundTrip) {
    for (auto k : {FreezeScope::Kind::projector_only, FreezeScope::Kind::projector_plus_fc1,
                   FreezeScope::Kind::projector_plus_encoder, FreezeScope::Kind::audio_projector_only,
                   FreezeScope::Kind::audio_projector_plus_encoder, FreezeScope::Kind::full}) {
        const FreezeScope s{k, {}};
        EXPECT_EQ(scope_from_string(to_string(s)).kind, k);
    }
    const auto c = scope_from_string("custom:fc_audio.*,delim.audio_start");
    EXPECT_EQ(c.kind, FreezeScope::Kind::custom);
    EXPECT_EQ(c.patterns, (std::vector<std::string>{"fc_audio.*", "delim.audio_start"}));
    EXPECT_THROW(scope_from_string("everything"), ConfigError);
}

TEST_F(Trainer, UpdatedCountsMatchEnumeration) {
    const auto b = omni();
    auto enumerate = [&](auto pred) {
        std::size_t n = 0;
        for (const ParamSet* s : b.param_sets())
            for (const auto& [name, e] : *s)
                if (pred(name)) n += e.value->size();
        return n;
    };
    const auto proj = [](const std::string& n) {
        return starts(n, "fc_vision_2.") || starts(n, "fc_audio.") || starts(n, "delim.");
    };
    const auto full = [&](const std::string& n) {
        return proj(n) || starts(n, "vision_proj.fc1.") || starts(n, "vision.") || starts(n, "audio.");
    };
    const std::size_t p = updated_param_count(b, {FreezeScope::Kind::projector_only, {}});
    const std::size_t f = updated_param_count(b, {FreezeScope::Kind::full, {}});
    EXPECT_EQ(p, enumerate(proj));
    EXPECT_EQ(f, enumerate(full));
    EXPECT_LT(p, f);
}

TEST_F(Trainer, ProjectorScopeLeavesEncodersAlone) {
    const auto b = omni();
    const auto before = all_hashes(b);
    const auto r = train(b, latent_mix(), quick_config(3));
    const auto after = all_hashes(r.bundle);
    for (const auto& [n, h] : before) {
        const bool trainable = starts(n, "fc_vision_2.") || starts(n, "fc_audio.") || starts(n, "delim.");
        if (trainable) EXPECT_NE(after.at(n), h) << n;
        else EXPECT_EQ(after.at(n), h) << n;
    }
}

TEST_F(Trainer, EncoderScopeChangesEncoder) {
    auto cfg = quick_config(3);
    cfg.scope = {FreezeScope::Kind::projector_plus_encoder, {}};
    const auto b = omni();
    const auto before = all_hashes(b);
    const auto after = all_hashes(train(b, latent_mix(), cfg).bundle);
    std::size_t changed_vision = 0;
    for (const auto& [n, h] : before) {
        if (starts(n, "vision.") && after.at(n) != h) ++changed_vision;
        if (starts(n, "audio.") || starts(n, "text.") || starts(n, "lora.") || n == names::kMergeGamma) {
            EXPECT_EQ(after.at(n), h) << n;
        }
    }
    EXPECT_GT(changed_vision, 0u);
}

TEST_F(Trainer, TwoStageContinuesBitwise) {
    auto single = quick_config(4);
    auto two = single;
    two.stage2 = TrainConfig::Stage2{{FreezeScope::Kind::projector_plus_encoder, {}}, 1e-5, 3};
    const auto mix = latent_mix();
    const auto r1 = train(omni(), mix, single);
    const auto r2 = train(omni(), mix, two);
    EXPECT_EQ(r2.stage1_end_hashes, all_hashes(r1.bundle));
    EXPECT_EQ(r2.stage2_start_hashes, r2.stage1_end_hashes);
    ASSERT_EQ(r2.trace.size(), 7u);
    EXPECT_EQ(r2.trace[4].stage, 2);
    EXPECT_EQ(r2.trace[4].lr, lr_at(0, 1e-5, single.warmup_steps));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r2.trace[i].loss, r1.trace[i].loss);
}

TEST_F(Trainer, DeterministicPerSeed) {
    const auto mix = latent_mix();
    const auto a = train(omni(), mix, quick_config(5));
    const auto b = train(omni(), mix, quick_config(5));
    EXPECT_EQ(all_hashes(a.bundle), all_hashes(b.bundle));
    std::ostringstream ta, tb;
    write_trace_tsv(ta, a.trace);
    write_trace_tsv(tb, b.trace);
    EXPECT_EQ(ta.str(), tb.str());
    auto other = quick_config(5);
    other.seed = 6;
    EXPECT_NE(all_hashes(train(omni(), mix, other).bundle), all_hashes(a.bundle));
}

TEST_F(Trainer, ClipBoundHolds) {
    auto cfg = quick_config(20);
    cfg.max_grad_norm = 0.05;
    const auto r = train(omni(), latent_mix(), cfg);
    std::size_t clipped = 0;
    for (const auto& row : r.trace) {
        EXPECT_LE(row.grad_norm_post_clip, cfg.max_grad_norm + 1e-9);
        if (row.grad_norm_pre_clip <= cfg.max_grad_norm) EXPECT_EQ(row.grad_norm_post_clip, row.grad_norm_pre_clip);
        else ++clipped;
    }
    EXPECT_GT(clipped, 0u);
}

TEST_F(Trainer, HookSeesCheckpoints) {
    auto cfg = quick_config(25);
    std::vector<std::size_t> seen;
    train(omni(), latent_mix(), cfg, [&](int stage, std::size_t done, const ModelBundle&) {
        EXPECT_EQ(stage, 1);
        seen.push_back(done);
    });
    EXPECT_EQ(seen, (std::vector<std::size_t>{10, 20, 25}));
}

TEST_F(Trainer, ConvergesOnAlignedToyData) {
    auto cfg = quick_config(300, 8);
    cfg.warmup_steps = 30;
    const auto r = train(omni(), latent_mix(2048), cfg);
    const double initial = r.trace.front().loss;
    const double final_loss = mean_loss(r.trace, 290, 300);
    EXPECT_LT(final_loss, 0.2 * initial) << "initial " << initial << " final " << final_loss;
}

TEST_F(Trainer, LossDescendsForEveryTaskVariant) {
    auto cfg = quick_config(100, 8);
    const auto mix = latent_mix(1024);
    for (auto task : kAllTasks) {
        const auto r = train(omni(task), mix, cfg);
        EXPECT_LT(mean_loss(r.trace, 90, 100), mean_loss(r.trace, 0, 10)) << to_string(task);
    }
}

TEST_F(Trainer, NonFiniteLossNamesStepAndSource) {
    PairDataset bad;
    bad.name = "poisoned";
    for (int i = 0; i < 4; ++i) {
        Tensor img = gaussian_tensor({8, 8, 3}, 1.0, 40 + i);
        img[5] = std::nan("");
        bad.pairs.emplace_back(InputItem::make_image(img), InputItem::make_text("x"));
    }
    MixtureSpec mix;
    mix.add(share(bad), 1.0);
    try {
        train(omni(), mix, quick_config(2));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("poisoned"), std::string::npos) << msg;
    }
}

TEST_F(Trainer, UnreachedProjectorGetsZeroGradient) {
    MixtureSpec mix;
    mix.add(share(make_class_pairs(kCfg, ViewKind::image, 16, {})), 1.0);
    const auto b = omni();
    const auto r = train(b, mix, quick_config(2));
    // Only decay reaches fc_audio: w <- w * (1 - lr * wd) per step.
    const Tensor& w0 = b.audio_proj->params.get(names::kFcAudioW);
    const Tensor& w2 = r.bundle.audio_proj->params.get(names::kFcAudioW);
    const double f = (1.0 - lr_at(0, 1e-3, 10) * 0.01) * (1.0 - lr_at(1, 1e-3, 10) * 0.01);
    for (std::size_t i = 0; i < w0.size(); i += 97) EXPECT_NEAR(w2[i], w0[i] * f, 1e-15);
}

TEST_F(Trainer, EfficiencyRelation) {
    const auto b = omni();
    auto cfg = quick_config(0, 4);
    EfficiencyOptions opt;
    opt.warmup_steps = 2;
    opt.timed_steps = 6;
    opt.block = 2;
    const auto rows = measure_efficiency(b, latent_mix(), cfg,
                                         {{FreezeScope::Kind::projector_only, {}}, {FreezeScope::Kind::full, {}}}, opt);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].scope, "projector_only");
    EXPECT_LT(rows[0].updated_params, rows[1].updated_params);
    for (const auto& r : rows) {
        EXPECT_GT(r.seconds_per_step, 0.0);
        EXPECT_NEAR(r.steps_total_minutes, r.seconds_per_step * 15000.0 / 60.0, 1e-9);
    }
}
