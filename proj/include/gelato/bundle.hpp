#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gelato/projectors.hpp"

namespace gelato {

enum class TaskVariant { retrieval, text_matching, clustering, classification };
enum class Modality { text, vision, audio, omni };

inline constexpr std::array<TaskVariant, 4> kAllTasks{TaskVariant::retrieval, TaskVariant::text_matching,
                                                      TaskVariant::clustering, TaskVariant::classification};
inline constexpr std::array<Modality, 4> kAllModalities{Modality::text, Modality::vision, Modality::audio,
                                                        Modality::omni};

inline std::string to_string(TaskVariant t) {
    switch (t) {
    case TaskVariant::retrieval: return "retrieval";
    case TaskVariant::text_matching: return "text-matching";
    case TaskVariant::clustering: return "clustering";
    case TaskVariant::classification: return "classification";
    }
    return "?";
}

inline TaskVariant task_from_string(const std::string& s) {
    for (auto t : kAllTasks)
        if (to_string(t) == s) return t;
    throw ConfigError("unknown task variant '" + s + "'");
}

inline std::string to_string(Modality m) {
    switch (m) {
    case Modality::text: return "text";
    case Modality::vision: return "vision";
    case Modality::audio: return "audio";
    case Modality::omni: return "omni";
    }
    return "?";
}

inline Modality modality_from_string(const std::string& s) {
    for (auto m : kAllModalities)
        if (to_string(m) == s) return m;
    throw ConfigError("unknown modality '" + s + "'");
}

inline bool has_vision(Modality m) { return m == Modality::vision || m == Modality::omni; }
inline bool has_audio(Modality m) { return m == Modality::audio || m == Modality::omni; }

// Frozen weights shared by every task variant.
struct SharedWeights {
    ModelConfig config;
    std::uint64_t seed = 0;
    TextBackbone text;
    VisionTower vision;
    AudioTower audio;
    ParamSet vision_merger;
};

// What a task variant selects: its adapter plus its trained projector heads
// and delimiter rows.
struct TaskWeights {
    LoraAdapter lora;
    ParamSet fc_vision_2;
    ParamSet fc_audio;
    DelimiterEmbeddings delimiters;
};

// Everything one checkpoint file holds.
struct ModelPackage {
    SharedWeights shared;
    std::map<TaskVariant, TaskWeights> variants;
};

// A runnable model: one task variant, towers gated by modality.
struct ModelBundle {
    ModelConfig config;
    TaskVariant task = TaskVariant::retrieval;
    Modality modality = Modality::omni;
    TextBackbone text;
    LoraAdapter lora;
    std::optional<VisionTower> vision;
    std::optional<VisionProjector> vision_proj;
    std::optional<AudioTower> audio;
    std::optional<AudioProjector> audio_proj;
    DelimiterEmbeddings delimiters;
    std::string source; // checkpoint path, empty for in-memory bundles

    std::vector<ParamSet*> param_sets() {
        std::vector<ParamSet*> out{&text.params, &lora.params};
        if (vision) out.push_back(&vision->params);
        if (vision_proj) out.push_back(&vision_proj->params);
        if (audio) out.push_back(&audio->params);
        if (audio_proj) out.push_back(&audio_proj->params);
        out.push_back(&delimiters.params);
        return out;
    }

    std::vector<const ParamSet*> param_sets() const {
        auto sets = const_cast<ModelBundle*>(this)->param_sets();
        return {sets.begin(), sets.end()};
    }

    ParamSet* find(const std::string& name) {
        for (auto* s : param_sets())
            if (s->contains(name)) return s;
        return nullptr;
    }

    std::vector<std::string> resident_names() const {
        std::vector<std::string> out;
        for (const auto* s : param_sets())
            for (const auto& n : s->names()) out.push_back(n);
        return out;
    }
};

inline TaskWeights make_task_weights(const ModelConfig& cfg, std::uint64_t seed, TaskVariant task) {
    TaskWeights w;
    w.lora = build_lora_adapter(cfg, mix_seed(seed, "lora." + to_string(task)));
    auto init = init_trainable(cfg, mix_seed(seed, "init." + to_string(task)));
    w.fc_vision_2 = std::move(init.fc_vision_2);
    w.fc_audio = std::move(init.fc_audio);
    w.delimiters = std::move(init.delimiters);
    return w;
}

// Fresh package: seeded towers and adapters, freshly initialized trainable sets.
inline ModelPackage build_package(const ModelConfig& cfg, std::uint64_t seed,
                                  const std::vector<TaskVariant>& tasks = {kAllTasks.begin(), kAllTasks.end()}) {
    ModelPackage pkg;
    auto [vision, audio, text] = build_towers(cfg, seed);
    pkg.shared = SharedWeights{cfg, seed, std::move(text), std::move(vision), std::move(audio),
                               build_vision_merger(cfg, mix_seed(seed, "merger"))};
    for (auto t : tasks) pkg.variants.emplace(t, make_task_weights(cfg, seed, t));
    return pkg;
}

namespace detail {
inline ParamSet select_delimiters(const ParamSet& all, Modality m) {
    ParamSet out;
    for (const auto& [n, e] : all) {
        const bool is_vision = n.rfind("delim.vision", 0) == 0;
        const bool is_audio = n.rfind("delim.audio", 0) == 0;
        if ((is_vision && has_vision(m)) || (is_audio && has_audio(m))) out.add_shared(n, e.value, e.trainable);
    }
    return out;
}
} // namespace detail

// Instantiates only what (task, modality) needs:
//   text   -> backbone + adapter
//   vision -> + vision tower, LayerNorm/fc_vision_1/fc_vision_2, vision delimiters
//   audio  -> + audio tower, fc_audio, audio delimiters
//   omni   -> everything
// Tensor storage is shared with the package.
inline ModelBundle assemble_bundle(const ModelPackage& pkg, TaskVariant task, Modality modality) {
    auto it = pkg.variants.find(task);
    if (it == pkg.variants.end()) throw VariantNotFoundError("task variant '" + to_string(task) + "' not present");
    const TaskWeights& tw = it->second;
    ModelBundle b;
    b.config = pkg.shared.config;
    b.task = task;
    b.modality = modality;
    b.text = pkg.shared.text;
    b.lora = tw.lora;
    if (has_vision(modality)) {
        b.vision = pkg.shared.vision;
        b.vision_proj = make_vision_projector(pkg.shared.vision_merger, tw.fc_vision_2);
    }
    if (has_audio(modality)) {
        b.audio = pkg.shared.audio;
        b.audio_proj = AudioProjector{tw.fc_audio};
    }
    b.delimiters.params = detail::select_delimiters(tw.delimiters.params, modality);
    return b;
}

namespace detail {
inline ParamSet pick(const ParamSet& from, const std::vector<std::string>& wanted) {
    ParamSet out;
    for (const auto& n : wanted) out.add_shared(n, from.storage(n), from.trainable(n));
    return out;
}
} // namespace detail

// Writes a bundle's current task-specific tensors back into the package
// (shared tower tensors too, for runs that unfroze them). Tensors absent from
// the bundle because of modality gating keep their package values.
inline void store_bundle(ModelPackage& pkg, const ModelBundle& b) {
    auto& tw = pkg.variants[b.task];
    tw.lora = b.lora;
    if (b.vision_proj) {
        tw.fc_vision_2 = detail::pick(b.vision_proj->params, {names::kFc2W, names::kFc2B});
        pkg.shared.vision_merger =
            detail::pick(b.vision_proj->params, {names::kMergeGamma, names::kMergeBeta, names::kFc1W, names::kFc1B});
    }
    if (b.audio_proj) tw.fc_audio = b.audio_proj->params;
    ParamSet delims;
    for (const auto& [n, e] : tw.delimiters.params) {
        delims.add_shared(n, b.delimiters.params.contains(n) ? b.delimiters.params.storage(n) : e.value, e.trainable);
    }
    tw.delimiters.params = std::move(delims);
    pkg.shared.text = b.text;
    if (b.vision) pkg.shared.vision = *b.vision;
    if (b.audio) pkg.shared.audio = *b.audio;
}

} // namespace gelato
