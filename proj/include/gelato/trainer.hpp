#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gelato/embedder.hpp"
#include "gelato/gradcheck.hpp"
#include "gelato/hash.hpp"
#include "gelato/loss.hpp"

namespace gelato {

// ---------------------------------------------------------------------------
// Freeze scopes

struct FreezeScope {
    enum class Kind {
        projector_only,
        projector_plus_fc1,
        projector_plus_encoder,
        audio_projector_only,
        audio_projector_plus_encoder,
        full,
        custom,
    };
    Kind kind = Kind::projector_only;
    // For custom scopes: exact names, or prefixes ending in '*'.
    std::vector<std::string> patterns;

    static FreezeScope custom(std::vector<std::string> patterns) { return {Kind::custom, std::move(patterns)}; }
};

inline std::string to_string(FreezeScope::Kind k) {
    using K = FreezeScope::Kind;
    switch (k) {
    case K::projector_only: return "projector_only";
    case K::projector_plus_fc1: return "projector_plus_fc1";
    case K::projector_plus_encoder: return "projector_plus_encoder";
    case K::audio_projector_only: return "audio_projector_only";
    case K::audio_projector_plus_encoder: return "audio_projector_plus_encoder";
    case K::full: return "full";
    case K::custom: return "custom";
    }
    return "?";
}

inline std::string to_string(const FreezeScope& s) {
    if (s.kind != FreezeScope::Kind::custom) return to_string(s.kind);
    std::string out = "custom:";
    for (std::size_t i = 0; i < s.patterns.size(); ++i) out += (i ? "," : "") + s.patterns[i];
    return out;
}

inline FreezeScope scope_from_string(const std::string& s) {
    using K = FreezeScope::Kind;
    for (K k : {K::projector_only, K::projector_plus_fc1, K::projector_plus_encoder, K::audio_projector_only,
                K::audio_projector_plus_encoder, K::full}) {
        if (to_string(k) == s) return {k, {}};
    }
    if (s.rfind("custom:", 0) == 0) {
        std::vector<std::string> pats;
        std::string cur;
        for (char c : s.substr(7)) {
            if (c == ',') {
                if (!cur.empty()) pats.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) pats.push_back(cur);
        if (pats.empty()) throw ConfigError("custom scope lists no parameters");
        return FreezeScope::custom(std::move(pats));
    }
    throw ConfigError("unknown freeze scope '" + s + "'");
}

namespace detail {
inline bool starts_with(const std::string& s, const char* p) { return s.rfind(p, 0) == 0; }

inline bool pattern_match(const std::string& name, const std::string& pat) {
    if (!pat.empty() && pat.back() == '*') return name.rfind(pat.substr(0, pat.size() - 1), 0) == 0;
    return name == pat;
}

inline bool in_scope(const std::string& n, const FreezeScope& scope, Profile profile) {
    using K = FreezeScope::Kind;
    const bool fc2 = starts_with(n, "fc_vision_2.");
    const bool fca = starts_with(n, "fc_audio.");
    const bool fc1 = starts_with(n, "vision_proj.fc1.");
    const bool vis_tower = starts_with(n, "vision.");
    const bool aud_tower = starts_with(n, "audio.");
    const bool aud_delim = starts_with(n, "delim.audio_");
    const bool vis_delim = starts_with(n, "delim.vision_") && profile == Profile::small;
    const bool projector = fc2 || fca || aud_delim || vis_delim;
    switch (scope.kind) {
    case K::projector_only: return projector;
    case K::projector_plus_fc1: return projector || fc1;
    case K::projector_plus_encoder: return projector || fc1 || vis_tower;
    case K::audio_projector_only: return fca || aud_delim;
    case K::audio_projector_plus_encoder: return fca || aud_delim || aud_tower;
    case K::full: return projector || fc1 || vis_tower || aud_tower;
    case K::custom:
        return std::any_of(scope.patterns.begin(), scope.patterns.end(),
                           [&](const std::string& p) { return pattern_match(n, p); });
    }
    return false;
}
} // namespace detail

// Marks exactly the scope's parameters trainable and freezes the rest.
inline void apply_scope(ModelBundle& b, const FreezeScope& scope) {
    std::size_t hits = 0;
    for (ParamSet* s : b.param_sets()) {
        for (const auto& n : s->names()) {
            const bool on = detail::in_scope(n, scope, b.config.profile);
            s->set_trainable(n, on);
            hits += on;
        }
    }
    if (hits == 0) throw ConfigError("scope '" + to_string(scope) + "' selects no loaded parameters");
}

inline std::vector<std::string> trainable_names(const ModelBundle& b) {
    std::vector<std::string> out;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, e] : *s)
            if (e.trainable) out.push_back(n);
    return out;
}

inline std::size_t updated_param_count(ModelBundle b, const FreezeScope& scope) {
    apply_scope(b, scope);
    std::size_t total = 0;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [_, e] : *s)
            if (e.trainable) total += e.value->size();
    return total;
}

// Name -> SHA-256 of every frozen tensor in the bundle.
inline std::map<std::string, std::string> frozen_hashes(const ModelBundle& b) {
    std::map<std::string, std::string> out;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, e] : *s)
            if (!e.trainable) out.emplace(n, tensor_sha256(*e.value));
    return out;
}

inline std::map<std::string, std::string> all_hashes(const ModelBundle& b) {
    std::map<std::string, std::string> out;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, e] : *s) out.emplace(n, tensor_sha256(*e.value));
    return out;
}

// ---------------------------------------------------------------------------
// Data

struct PairDataset {
    std::string name;
    std::vector<std::pair<InputItem, InputItem>> pairs;
};

struct MixtureSpec {
    struct Source {
        std::shared_ptr<const PairDataset> data;
        double weight = 1.0;
    };
    std::vector<Source> sources;

    void add(std::shared_ptr<const PairDataset> d, double w) { sources.push_back({std::move(d), w}); }

    std::vector<double> normalized_weights() const {
        if (sources.empty()) throw ConfigError("mixture has no sources");
        double total = 0.0;
        for (const auto& s : sources) {
            if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) throw ConfigError("mixture weights must be >= 0");
            if (!s.data || s.data->pairs.empty()) throw ConfigError("mixture source has no pairs");
            total += s.weight;
        }
        if (!(total > 0.0)) throw ConfigError("mixture needs at least one positive weight");
        std::vector<double> w;
        for (const auto& s : sources) w.push_back(s.weight / total);
        return w;
    }
};

struct PairBatch {
    std::size_t source = 0;
    std::vector<std::size_t> indices;
};

// One source drawn by weight; B pairs from it without replacement (with
// replacement only when the source holds fewer than B pairs).
inline PairBatch sample_batch(const MixtureSpec& mix, std::mt19937_64& rng, std::size_t batch_size) {
    const auto w = mix.normalized_weights();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r = unit(rng);
    PairBatch b;
    double acc = 0.0;
    b.source = w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (w[i] > 0.0 && r < acc) {
            b.source = i;
            break;
        }
    }
    if (b.source == w.size()) {
        for (std::size_t i = w.size(); i-- > 0;)
            if (w[i] > 0.0) {
                b.source = i;
                break;
            }
    }
    const std::size_t n = mix.sources[b.source].data->pairs.size();
    if (n >= batch_size) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < batch_size; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        b.indices.assign(idx.begin(), idx.begin() + batch_size);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t i = 0; i < batch_size; ++i) b.indices.push_back(pick(rng));
    }
    return b;
}

// ---------------------------------------------------------------------------
// Optimizer

struct TrainConfig {
    struct Stage2 {
        FreezeScope scope;
        double lr = 1e-5;
        std::size_t steps = 0;
    };

    double lr_max = 2e-4;
    std::size_t warmup_steps = 500;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double eps = 1e-8;
    double max_grad_norm = 1.0;
    std::size_t batch_size = 256;
    std::size_t steps = 15000;
    double tau = 0.02;
    std::vector<std::size_t> k_set = kToyPrefixes;
    std::uint64_t seed = 0;
    FreezeScope scope;
    std::optional<Stage2> stage2;
    std::size_t check_interval = 100;
};

// lr_max * (step + 1) / warmup during warmup, lr_max afterwards.
inline double lr_at(std::size_t step, double lr_max, std::size_t warmup) {
    if (warmup == 0 || step >= warmup) return lr_max;
    return lr_max * double(step + 1) / double(warmup);
}
inline double lr_at(std::size_t step, const TrainConfig& cfg) { return lr_at(step, cfg.lr_max, cfg.warmup_steps); }

struct OptState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::size_t t = 0;
};

// Decoupled AdamW over every trainable entry of `sets`. `grads` must cover the
// trainable set exactly.
inline void adamw_step(const std::vector<ParamSet*>& sets, const GradStore& grads, OptState& state, double lr,
                       const TrainConfig& cfg) {
    std::size_t covered = 0;
    for (ParamSet* s : sets)
        for (const auto& [n, e] : *s) {
            if (!e.trainable) continue;
            auto g = grads.find(n);
            if (g == grads.end()) throw DimensionError("no gradient for trainable parameter '" + n + "'");
            if (g->second.shape() != e.value->shape()) {
                throw DimensionError("gradient for '" + n + "' has shape " + shape_str(g->second.shape()) +
                                     ", parameter has " + shape_str(e.value->shape()));
            }
            ++covered;
        }
    if (covered != grads.size()) throw DimensionError("gradients supplied for non-trainable parameters");

    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    for (ParamSet* s : sets) {
        for (const auto& name : s->names()) {
            if (!s->trainable(name)) continue;
            const Tensor& g = grads.at(name);
            auto [mi, _m] = state.m.try_emplace(name, g.shape(), 0.0);
            auto [vi, _v] = state.v.try_emplace(name, g.shape(), 0.0);
            Tensor& m = mi->second;
            Tensor& v = vi->second;
            Tensor& p = s->mutate(name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                p[i] -= lr * cfg.weight_decay * p[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training

struct TraceRow {
    std::size_t step = 0;
    int stage = 1;
    std::string source;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm_pre_clip = 0.0;
    double grad_norm_post_clip = 0.0;
};

using LossTrace = std::vector<TraceRow>;

inline void write_trace_tsv(std::ostream& out, const LossTrace& trace) {
    out << "step\tstage\tsource\tlr\tloss\tgrad_norm_pre_clip\tgrad_norm_post_clip\n";
    out.precision(17);
    for (const auto& r : trace) {
        out << r.step << '\t' << r.stage << '\t' << r.source << '\t' << r.lr << '\t' << r.loss << '\t'
            << r.grad_norm_pre_clip << '\t' << r.grad_norm_post_clip << '\n';
    }
}

// Called every check_interval steps and at the end of each stage with the
// stage number and the count of completed steps in it.
using StepHook = std::function<void(int stage, std::size_t steps_done, const ModelBundle&)>;

struct TrainResult {
    ModelBundle bundle;
    LossTrace trace;
    // Trainable values at the start of stage 2 (empty for single-stage runs).
    std::map<std::string, std::string> stage2_start_hashes;
    std::map<std::string, std::string> stage1_end_hashes;
};

struct StepResult {
    double loss = 0.0;
    ClipResult clip;
};

// Forward + backward on one batch; returns the loss and clipped gradients.
inline std::pair<double, GradStore> batch_gradients(const ModelBundle& b, const PairDataset& data,
                                                    const std::vector<std::size_t>& indices, const TrainConfig& cfg) {
    Tape t;
    std::vector<Var> left, right;
    for (std::size_t i : indices) {
        left.push_back(pooled_state(t, data.pairs[i].first, b));
        right.push_back(pooled_state(t, data.pairs[i].second, b));
    }
    Var loss = matryoshka_loss(t, concat_rows(t, left), concat_rows(t, right), cfg.tau, cfg.k_set);
    const double value = t.value(loss).item();
    t.backward(loss);
    GradStore grads = t.gradients();
    // Trainable tensors the batch never reached (e.g. fc_audio on an image
    // batch) get zero gradients so the optimizer sees the full trainable set.
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, e] : *s)
            if (e.trainable) grads.try_emplace(n, e.value->shape(), 0.0);
    return {value, std::move(grads)};
}

inline StepResult train_step(ModelBundle& b, const PairDataset& data, const std::vector<std::size_t>& indices,
                             OptState& opt, double lr, const TrainConfig& cfg) {
    auto [loss, grads] = batch_gradients(b, data, indices, cfg);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    StepResult r;
    r.loss = loss;
    r.clip = clip_global_norm(grads, cfg.max_grad_norm);
    adamw_step(b.param_sets(), grads, opt, lr, cfg);
    return r;
}

namespace detail {

inline void verify_frozen(const ModelBundle& b, const std::map<std::string, std::string>& expected, std::size_t step) {
    for (const auto& [n, h] : frozen_hashes(b)) {
        auto it = expected.find(n);
        if (it != expected.end() && it->second != h) {
            throw NumericError("frozen parameter '" + n + "' changed by step " + std::to_string(step));
        }
    }
}

inline std::map<std::string, std::string> trainable_hashes(const ModelBundle& b) {
    std::map<std::string, std::string> out;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, e] : *s)
            if (e.trainable) out.emplace(n, tensor_sha256(*e.value));
    return out;
}

inline void run_stage(ModelBundle& b, const MixtureSpec& mix, const TrainConfig& cfg, int stage, double lr_max,
                      std::size_t steps, std::mt19937_64& rng, LossTrace& trace, const StepHook& hook) {
    OptState opt;
    const auto frozen = frozen_hashes(b);
    for (std::size_t step = 0; step < steps; ++step) {
        const PairBatch batch = sample_batch(mix, rng, cfg.batch_size);
        const auto& src = *mix.sources[batch.source].data;
        const double lr = lr_at(step, lr_max, cfg.warmup_steps);
        StepResult r;
        try {
            r = train_step(b, src, batch.indices, opt, lr, cfg);
        } catch (const NumericError& e) {
            throw NumericError("stage " + std::to_string(stage) + " step " + std::to_string(step) + ", source '" +
                               src.name + "': " + e.what());
        }
        trace.push_back({step, stage, src.name, lr, r.loss, r.clip.pre_norm, r.clip.post_norm});
        if (cfg.check_interval && (step + 1) % cfg.check_interval == 0 && step + 1 < steps) {
            verify_frozen(b, frozen, step);
            if (hook) hook(stage, step + 1, b);
        }
    }
    verify_frozen(b, frozen, steps);
    if (hook) hook(stage, steps, b);
}

} // namespace detail

// Runs cfg.steps under cfg.scope, then the optional second stage from the
// stage-1 result with fresh optimizer moments.
inline TrainResult train(ModelBundle bundle, const MixtureSpec& mix, const TrainConfig& cfg, const StepHook& hook = {}) {
    validate_prefixes(cfg.k_set, bundle.config.text.d_text);
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    mix.normalized_weights();
    TrainResult out;
    std::mt19937_64 rng(cfg.seed);
    apply_scope(bundle, cfg.scope);
    detail::run_stage(bundle, mix, cfg, 1, cfg.lr_max, cfg.steps, rng, out.trace, hook);
    if (cfg.stage2) {
        out.stage1_end_hashes = all_hashes(bundle);
        apply_scope(bundle, cfg.stage2->scope);
        out.stage2_start_hashes = all_hashes(bundle);
        detail::run_stage(bundle, mix, cfg, 2, cfg.stage2->lr, cfg.stage2->steps, rng, out.trace, hook);
    }
    out.bundle = std::move(bundle);
    return out;
}

// ---------------------------------------------------------------------------
// Efficiency

struct EfficiencyRow {
    std::string scope;
    std::size_t updated_params = 0;
    double seconds_per_step = 0.0;
    double steps_total_minutes = 0.0;
};

struct EfficiencyOptions {
    std::size_t warmup_steps = 10;
    std::size_t timed_steps = 50;
    std::size_t block = 5;                // scopes alternate in blocks of this many timed steps
    std::size_t budget_steps = 15000;     // for the total-minutes column
};

// Times real optimizer steps for each scope on identical batches. Scopes are
// interleaved in short blocks so drift in machine load hits all of them alike.
inline std::vector<EfficiencyRow> measure_efficiency(const ModelBundle& bundle, const MixtureSpec& mix,
                                                     const TrainConfig& cfg, const std::vector<FreezeScope>& scopes,
                                                     EfficiencyOptions opt = {}) {
    using clock = std::chrono::steady_clock;
    const std::size_t total_steps = opt.warmup_steps + opt.timed_steps;
    std::mt19937_64 rng(cfg.seed);
    std::vector<PairBatch> batches;
    for (std::size_t i = 0; i < total_steps; ++i) batches.push_back(sample_batch(mix, rng, cfg.batch_size));

    std::vector<ModelBundle> runs(scopes.size(), bundle);
    std::vector<OptState> opts(scopes.size());
    std::vector<double> seconds(scopes.size(), 0.0);
    std::vector<EfficiencyRow> rows;
    for (std::size_t s = 0; s < scopes.size(); ++s) {
        apply_scope(runs[s], scopes[s]);
        rows.push_back({to_string(scopes[s]), updated_param_count(bundle, scopes[s]), 0.0, 0.0});
    }
    auto step = [&](std::size_t s, std::size_t i) {
        const auto& b = batches[i];
        train_step(runs[s], *mix.sources[b.source].data, b.indices, opts[s], lr_at(i, cfg), cfg);
    };
    for (std::size_t i = 0; i < opt.warmup_steps; ++i)
        for (std::size_t s = 0; s < scopes.size(); ++s) step(s, i);
    const std::size_t block = std::max<std::size_t>(1, opt.block);
    for (std::size_t begin = opt.warmup_steps; begin < total_steps; begin += block) {
        const std::size_t end = std::min(total_steps, begin + block);
        for (std::size_t s = 0; s < scopes.size(); ++s) {
            const auto t0 = clock::now();
            for (std::size_t i = begin; i < end; ++i) step(s, i);
            seconds[s] += std::chrono::duration<double>(clock::now() - t0).count();
        }
    }
    for (std::size_t s = 0; s < scopes.size(); ++s) {
        rows[s].seconds_per_step = seconds[s] / double(opt.timed_steps);
        rows[s].steps_total_minutes = rows[s].seconds_per_step * double(opt.budget_steps) / 60.0;
    }
    return rows;
}

} // namespace gelato
