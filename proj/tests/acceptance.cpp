// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: gelato_acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "gelato/evalkit.hpp"
#include "gelato/gradcheck.hpp"
#include "gelato/toy_data.hpp"

using namespace gelato;
namespace fs = std::filesystem;

namespace {

const ModelConfig kCfg = ModelConfig::toy();

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

bool starts(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / ("gelato_acceptance_" + std::to_string(::getpid()));
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::set<std::string> resident(const ModelBundle& b) {
    std::set<std::string> out;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, _] : *s) out.insert(n);
    return out;
}

// 1. Text embeddings agree bit for bit across modality-gated loads.
Outcome text_identity() {
    const fs::path ckpt = scratch() / "identity.gela";
    save_checkpoint(build_package(kCfg, 101), {}, ckpt);
    std::mt19937_64 rng(1);
    std::vector<std::string> texts;
    for (int i = 0; i < 100; ++i) {
        std::string s(1 + rng() % 24, ' ');
        for (auto& c : s) c = char(rng() % 256);
        texts.push_back(std::move(s));
    }
    std::size_t compared = 0, mismatched = 0;
    for (auto task : kAllTasks) {
        std::vector<ModelBundle> loads;
        for (auto m : kAllModalities) loads.push_back(load(ckpt, task, m));
        for (const auto& s : texts) {
            const Embedding ref = embed(InputItem::make_text(s), loads[0]);
            for (std::size_t i = 1; i < loads.size(); ++i) {
                const Embedding e = embed(InputItem::make_text(s), loads[i]);
                ++compared;
                if (!same_bits(e.full, ref.full) || !same_bits(e.raw_last_state, ref.raw_last_state)) ++mismatched;
            }
        }
    }
    return {mismatched == 0, std::to_string(compared) + " comparisons over 4 variants, " + std::to_string(mismatched) +
                                 " mismatched"};
}

// 2. Frozen tensors keep their hashes through 500 projector-scope steps.
Outcome freeze_discipline() {
    const ModelBundle init = assemble_bundle(build_package(kCfg, 102), TaskVariant::retrieval, Modality::omni);
    MixtureSpec mix;
    mix.add(share(make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, 4096, {})), 1.0);
    TrainConfig cfg;
    cfg.steps = 500;
    cfg.batch_size = 8;
    cfg.lr_max = 1e-3;
    cfg.warmup_steps = 50;
    cfg.seed = 2;
    const auto before = all_hashes(init);
    ModelBundle scoped = init;
    apply_scope(scoped, cfg.scope);
    std::set<std::string> trainable;
    for (const auto& n : trainable_names(scoped)) trainable.insert(n);
    const auto after = all_hashes(train(init, mix, cfg).bundle);
    std::size_t frozen_same = 0, frozen_changed = 0, train_changed = 0, train_same = 0;
    for (const auto& [n, h] : before) {
        const bool same = after.at(n) == h;
        if (trainable.count(n)) (same ? train_same : train_changed)++;
        else (same ? frozen_same : frozen_changed)++;
    }
    return {frozen_changed == 0 && train_same == 0 && frozen_same > 0 && train_changed > 0,
            std::to_string(frozen_same) + " frozen unchanged, " + std::to_string(frozen_changed) + " frozen changed, " +
                std::to_string(train_changed) + "/" + std::to_string(trainable.size()) + " trainable changed"};
}

// 3. Finite differences of the full loss against the tape gradient.
Outcome gradient_soundness() {
    ModelBundle b = assemble_bundle(build_package(kCfg, 103), TaskVariant::retrieval, Modality::omni);
    std::vector<InputItem> left, right;
    for (std::uint64_t i = 0; i < 4; ++i) {
        left.push_back(InputItem::make_image(gaussian_tensor({4, 4, 3}, 1.0, 500 + i)));
        right.push_back(InputItem::make_audio(gaussian_tensor({24}, 1.0, 600 + i)));
    }
    auto build = [&](Tape& t) {
        std::vector<Var> u, v;
        for (std::size_t i = 0; i < 4; ++i) {
            u.push_back(pooled_state(t, left[i], b));
            v.push_back(pooled_state(t, right[i], b));
        }
        return matryoshka_loss(t, concat_rows(t, u), concat_rows(t, v), 0.02, kToyPrefixes);
    };
    std::size_t entries = 0;
    for (const auto& n : trainable_names(b))
        for (const ParamSet* s : b.param_sets())
            if (s->contains(n)) entries += s->get(n).size();
    const double err = grad_check(build, b.param_sets());
    return {err < 1e-4, "max relative error " + fmt("%.3e", err) + " over " + std::to_string(entries) + " entries"};
}

// 4. Closed-form loss values.
Outcome loss_oracles() {
    bool ok = true;
    std::ostringstream d;
    const Tensor one = gaussian_tensor({1, 64}, 1.0, 1), other = gaussian_tensor({1, 64}, 1.0, 2);
    const double b1 = matryoshka_loss({one, other, 0.02, kToyPrefixes});
    ok = ok && b1 == 0.0;
    Tensor dup({2, 64});
    for (std::size_t j = 0; j < 64; ++j) dup.at(0, j) = dup.at(1, j) = one.at(0, j);
    Tensor ortho({2, 64}, 0.0);
    ortho.at(0, 0) = ortho.at(1, 1) = 1.0;
    double worst_dup = 0.0, worst_ortho = 0.0;
    for (std::size_t k : kToyPrefixes) {
        worst_dup = std::max(worst_dup, std::abs(infonce(dup, dup, k, 0.02) - std::log(2.0)));
        worst_ortho = std::max(worst_ortho, infonce(ortho, ortho, k, 0.02));
    }
    ok = ok && worst_dup <= 1e-9 && worst_ortho < 1e-15;
    d << "B=1 loss " << b1 << ", duplicate |L-ln2| " << fmt("%.2e", worst_dup) << ", orthonormal "
      << fmt("%.2e", worst_ortho);
    return {ok, d.str()};
}

// 5. Projector-only training separates held-out pairs.
Outcome convergence() {
    const ModelBundle init = assemble_bundle(build_package(kCfg, 105), TaskVariant::retrieval, Modality::omni);
    LatentViewSpec spec;
    MixtureSpec mix;
    mix.add(share(make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, 32000, spec, 0, "latent")), 1.0);
    const PairDataset held = make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, 256, spec, 1000000, "held");
    TrainConfig cfg;
    cfg.steps = 1000;
    cfg.batch_size = 32;
    cfg.lr_max = 1e-3;
    cfg.warmup_steps = 50;
    cfg.seed = 5;
    const ModelBundle trained = train(init, mix, cfg).bundle;
    const auto pts = retrieval_eval(retrieval_task_from_pairs(held), trained, {8});
    const SweepPoint& k8 = pts.front();
    const SweepPoint& full = pts.back();
    const double gap = std::abs(full.ndcg10 - k8.ndcg10);
    return {full.recall1 >= 0.9 && gap <= 0.25, "recall@1 " + fmt("%.4f", full.recall1) + ", nDCG@10 full " +
                                                    fmt("%.4f", full.ndcg10) + ", k=8 " + fmt("%.4f", k8.ndcg10)};
}

// 6. Ablation runs I-V (vision) and I-III (audio).
Outcome ablation_semantics() {
    const ModelPackage pkg = build_package(kCfg, 106);
    TrainConfig base;
    base.batch_size = 8;
    base.warmup_steps = 20;
    base.check_interval = 50;
    base.seed = 6;
    auto changed = [](const AblationResult& r, const std::string& prefix) {
        for (const auto& [n, h] : r.start_hashes)
            if (starts(n, prefix) && r.final_hashes.at(n) != h) return true;
        return false;
    };
    bool ok = true;
    std::vector<std::string> issues;
    auto check = [&](bool cond, const std::string& what) {
        if (!cond) issues.push_back(what);
        ok = ok && cond;
    };
    std::ostringstream summary;

    const ModelBundle vinit = assemble_bundle(pkg, TaskVariant::retrieval, Modality::vision);
    MixtureSpec vmix;
    vmix.add(share(make_class_pairs(kCfg, ViewKind::image, 2048, {})), 1.0);
    const auto veval = retrieval_task_merging_text(make_class_pairs(kCfg, ViewKind::image, 64, {}, 100000));
    const auto vrep = run_ablation_suite(vinit, vision_ablation_runs(200, 100), vmix, base, veval);

    const ModelBundle ainit = assemble_bundle(pkg, TaskVariant::retrieval, Modality::audio);
    MixtureSpec amix;
    amix.add(share(make_class_pairs(kCfg, ViewKind::audio, 2048, {})), 1.0);
    const auto aeval = retrieval_task_merging_text(make_class_pairs(kCfg, ViewKind::audio, 64, {}, 100000));
    const auto arep = run_ablation_suite(ainit, audio_ablation_runs(200, 100), amix, base, aeval);

    for (const auto* rep : {&vrep, &arep}) {
        const bool vision = rep == &vrep;
        const std::string tower = vision ? "vision." : "audio.";
        const std::string tag = vision ? "vision " : "audio ";
        for (const auto& r : rep->runs) {
            // (a) shared reset initialization.
            check(r.start_hashes == rep->runs[0].start_hashes, tag + r.name + " start hashes differ");
            // (b) encoder hashes move exactly when the scope unfreezes the encoder.
            const bool unfrozen = r.scope.find("encoder") != std::string::npos;
            check(changed(r, tower) == unfrozen, tag + r.name + " encoder hashes");
            check(!changed(r, "text.") && !changed(r, "lora."), tag + r.name + " backbone changed");
            // (c) stage 2 starts from stage-1 weights.
            if (r.scope.find("->") != std::string::npos) {
                check(!r.stage1_end_hashes.empty() && r.stage2_start_hashes == r.stage1_end_hashes,
                      tag + r.name + " stage-2 start");
                for (const auto& [n, h] : r.stage1_end_hashes)
                    if (rep->runs[0].final_hashes.at(n) != h) {
                        check(false, tag + r.name + " stage 1 differs from run I");
                        break;
                    }
            }
            summary << tag[0] << r.name << "=" << fmt("%.3f", r.final_ndcg10) << " ";
        }
    }
    check(vrep.runs.size() == 5 && arep.runs.size() == 3, "run counts");
    check(changed(vrep.runs[1], "vision_proj.fc1.") && !changed(vrep.runs[0], "vision_proj.fc1."), "fc1 scope");

    std::ofstream(scratch() / "ablation_vision.tsv") << [&] {
        std::ostringstream o;
        write_ablation_report(o, vrep);
        return o.str();
    }();
    std::string detail = "final nDCG@10 " + summary.str();
    if (!issues.empty()) detail += "; " + issues.front();
    return {ok, detail};
}

// 7. Projector scope is cheaper than full scope.
Outcome efficiency() {
    const ModelBundle b = assemble_bundle(build_package(kCfg, 107), TaskVariant::retrieval, Modality::omni);
    MixtureSpec mix;
    mix.add(share(make_latent_pairs(kCfg, ViewKind::image, ViewKind::audio, 1024, {})), 1.0);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.seed = 7;
    const auto rows =
        measure_efficiency(b, mix, cfg, {{FreezeScope::Kind::projector_only, {}}, {FreezeScope::Kind::full, {}}});
    const auto& p = rows[0];
    const auto& f = rows[1];
    return {p.updated_params < f.updated_params && p.seconds_per_step < f.seconds_per_step,
            "projector " + std::to_string(p.updated_params) + " params " + fmt("%.4f", p.seconds_per_step) +
                " s/step, full " + std::to_string(f.updated_params) + " params " + fmt("%.4f", f.seconds_per_step) +
                " s/step"};
}

// 8. Serialized sequences parse back to the item's structure.
Outcome grammar() {
    std::mt19937_64 rng(8);
    std::size_t roundtrip = 0, conserved = 0, ordered = 0, av_items = 0;
    for (int i = 0; i < 200; ++i) {
        const InputItem item = random_item(kCfg, rng);
        const TokenSequence seq = serialize(item, kCfg);
        if (parse_sequence(seq) == expected_segments(item, kCfg)) ++roundtrip;

        const MediaSet media = collect_media(item, kCfg);
        std::size_t features = 0, slots = 0;
        for (const auto* img : media.images) features += visual_slot_count(kCfg, *img);
        for (const auto* vid : media.videos)
            for (const auto& f : *vid) features += visual_slot_count(kCfg, f);
        for (const auto* a : media.audios) features += audio_slot_count(kCfg, *a);
        for (const auto& r : seq.slots) slots += r.count;
        std::size_t pads = 0;
        for (auto id : seq.ids) pads += (id == token::kVisualPad || id == token::kAudioPad);
        if (slots == features && pads == features) ++conserved;

        // Every video with a track: its audio slots precede its frame slots.
        std::vector<const InputItem*> videos;
        if (item.kind == InputItem::Kind::video) videos.push_back(&item);
        for (const auto& c : item.children)
            if (c.kind == InputItem::Kind::video) videos.push_back(&c);
        bool ok = true;
        std::size_t with_audio = 0;
        for (const auto* v : videos) {
            if (!v->video_audio) continue;
            ++with_audio;
            const TokenSequence vs = serialize(*v, kCfg);
            const auto segs = parse_sequence(vs);
            ok = ok && segs.front().kind == Segment::Kind::audio && vs.slots.front().source.kind == SlotSource::Kind::audio;
        }
        av_items += with_audio > 0;
        if (ok) ++ordered;
    }
    return {roundtrip == 200 && conserved == 200 && ordered == 200 && av_items > 0,
            "round trip " + std::to_string(roundtrip) + "/200, conservation " + std::to_string(conserved) +
                "/200, audio-first " + std::to_string(ordered) + "/200 (" + std::to_string(av_items) +
                " items with audio tracks)"};
}

// 9. nDCG@10 against exhaustive enumeration.
Outcome metric_oracle() {
    const double hand = ndcg_at_k({"x", "hit", "y"}, {{"hit", 1}}, 10);
    const double want = 1.0 / std::log2(3.0);
    std::size_t rankings = 0, bad = 0;
    std::mt19937_64 rng(9);
    const std::vector<std::string> pool{"a", "b", "c", "d"};
    for (std::size_t n = 1; n <= 4; ++n)
        for (int trial = 0; trial < 25; ++trial) {
            Qrels q;
            for (std::size_t i = 0; i < n; ++i) q[pool[i]] = int(rng() % 4);
            q[pool[rng() % n]] = 1 + int(rng() % 3);
            std::vector<std::string> docs(pool.begin(), pool.begin() + long(n));
            std::sort(docs.begin(), docs.end());
            double ideal = 0.0;
            auto dcg = [&](const std::vector<std::string>& r) {
                double s = 0.0;
                for (std::size_t i = 0; i < std::min<std::size_t>(10, r.size()); ++i)
                    s += (std::pow(2.0, q.at(r[i])) - 1.0) / std::log2(double(i) + 2.0);
                return s;
            };
            do ideal = std::max(ideal, dcg(docs));
            while (std::next_permutation(docs.begin(), docs.end()));
            do {
                ++rankings;
                if (std::abs(ndcg_at_k(docs, q, 10) - dcg(docs) / ideal) > 1e-12) ++bad;
            } while (std::next_permutation(docs.begin(), docs.end()));
        }
    return {bad == 0 && std::abs(hand - want) <= 1e-15,
            std::to_string(rankings) + " rankings, " + std::to_string(bad) + " mismatches, rank-2 value " +
                fmt("%.15f", hand)};
}

// 10. Checkpoint byte stability and load minimality.
Outcome checkpoint_round_trip() {
    const fs::path a = scratch() / "rt_a.gela", b = scratch() / "rt_b.gela";
    CheckpointManifest m;
    m.creation_step = 7;
    save_checkpoint(build_package(kCfg, 110), m, a);
    {
        auto [pkg, manifest] = load_package(a);
        save_checkpoint(pkg, manifest, b);
    }
    const bool identical = io::read_file(a) == io::read_file(b);

    const auto shared = shared_shapes(kCfg);
    const auto task = task_shapes(kCfg);
    std::size_t exact = 0;
    for (auto t : kAllTasks)
        for (auto mod : kAllModalities) {
            std::set<std::string> expected;
            for (const auto& [n, _] : shared) {
                const bool vis = starts(n, "vision.") || starts(n, "vision_proj.");
                const bool aud = starts(n, "audio.");
                if ((!vis && !aud) || (vis && has_vision(mod)) || (aud && has_audio(mod))) expected.insert(n);
            }
            for (const auto& [n, _] : task) {
                const bool vis = starts(n, "fc_vision_2.") || starts(n, "delim.vision_");
                const bool aud = starts(n, "fc_audio.") || starts(n, "delim.audio_");
                if ((!vis && !aud) || (vis && has_vision(mod)) || (aud && has_audio(mod))) expected.insert(n);
            }
            if (resident(load(a, t, mod)) == expected) ++exact;
        }
    return {identical && exact == 16, std::string("save/load/save ") + (identical ? "byte-identical" : "DIFFERS") +
                                          ", " + std::to_string(exact) + "/16 loads hold exactly the documented set"};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "text-path identity", 60, text_identity},
        {2, "freeze discipline", 300, freeze_discipline},
        {3, "gradient soundness", 300, gradient_soundness},
        {4, "loss oracles", 10, loss_oracles},
        {5, "convergence on separable toy data", 900, convergence},
        {6, "ablation scope semantics", 1800, ablation_semantics},
        {7, "efficiency relation", 600, efficiency},
        {8, "sequence grammar conformance", 10, grammar},
        {9, "metric oracle", 10, metric_oracle},
        {10, "checkpoint round trip", 10, checkpoint_round_trip},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = secs < c.budget_seconds;
        const bool pass = o.pass && in_budget;
        failures += !pass;
        std::printf("%s [%d] %s: %s (%.1f s of %.0f s budget%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.budget_seconds, in_budget ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::error_code ec;
    fs::remove_all(scratch(), ec);
    return failures == 0 ? 0 : 1;
}
