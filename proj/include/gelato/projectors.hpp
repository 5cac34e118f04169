#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gelato/towers.hpp"

namespace gelato {

namespace names {
inline const char* const kMergeGamma = "vision_proj.ln.gamma";
inline const char* const kMergeBeta = "vision_proj.ln.beta";
inline const char* const kFc1W = "vision_proj.fc1.w";
inline const char* const kFc1B = "vision_proj.fc1.b";
inline const char* const kFc2W = "fc_vision_2.w";
inline const char* const kFc2B = "fc_vision_2.b";
inline const char* const kFcAudioW = "fc_audio.w";
inline const char* const kFcAudioB = "fc_audio.b";
inline const char* const kVisionStart = "delim.vision_start";
inline const char* const kVisionEnd = "delim.vision_end";
inline const char* const kAudioStart = "delim.audio_start";
inline const char* const kAudioEnd = "delim.audio_end";
} // namespace names

// LayerNorm + fc_vision_1 (frozen) followed by fc_vision_2 (trainable).
struct VisionProjector {
    ParamSet params;
};

// fc_audio, trainable.
struct AudioProjector {
    ParamSet params;
};

// vision_start/end and audio_start/end rows; a loaded bundle may hold a subset.
struct DelimiterEmbeddings {
    ParamSet params;
};

// The task-specific trainable set, freshly initialized.
struct TrainableInit {
    ParamSet fc_vision_2;
    ParamSet fc_audio;
    DelimiterEmbeddings delimiters;
};

// Frozen LayerNorm + fc_vision_1, standing in for the source checkpoint's merger.
inline ParamSet build_vision_merger(const ModelConfig& cfg, std::uint64_t seed) {
    const auto& v = cfg.vision;
    ParamSet ps;
    ps.add(names::kMergeGamma, Tensor({v.d_vit}, 1.0));
    ps.add(names::kMergeBeta, Tensor({v.d_vit}, 0.0));
    ps.add(names::kFc1W, gaussian_tensor({v.d_mid, 4 * v.d_vit}, cfg.init_std, mix_seed(seed, names::kFc1W)));
    ps.add(names::kFc1B, Tensor({v.d_mid}, 0.0));
    return ps;
}

// Xavier-uniform weights, zero biases, N(0, 0.02) delimiter rows.
inline TrainableInit init_trainable(const ModelConfig& cfg, std::uint64_t seed) {
    const std::size_t d = cfg.text.d_text;
    TrainableInit out;
    out.fc_vision_2.add(names::kFc2W, xavier_uniform(d, cfg.vision.d_mid, mix_seed(seed, names::kFc2W)), true);
    out.fc_vision_2.add(names::kFc2B, Tensor({d}, 0.0), true);
    out.fc_audio.add(names::kFcAudioW, xavier_uniform(d, cfg.audio.d_aud, mix_seed(seed, names::kFcAudioW)), true);
    out.fc_audio.add(names::kFcAudioB, Tensor({d}, 0.0), true);
    const bool vision_delims_trainable = cfg.profile == Profile::small;
    for (const char* n : {names::kVisionStart, names::kVisionEnd}) {
        out.delimiters.params.add(n, gaussian_tensor({d}, 0.02, mix_seed(seed, n)), vision_delims_trainable);
    }
    for (const char* n : {names::kAudioStart, names::kAudioEnd}) {
        out.delimiters.params.add(n, gaussian_tensor({d}, 0.02, mix_seed(seed, n)), true);
    }
    return out;
}

inline VisionProjector make_vision_projector(const ParamSet& merger, const ParamSet& fc_vision_2) {
    VisionProjector p;
    p.params.merge_from(merger);
    p.params.merge_from(fc_vision_2);
    if (p.params.get(names::kFc1W).cols() != 4 * p.params.get(names::kMergeGamma).size()) {
        throw DimensionError("fc_vision_1 input width must be exactly 4 * d_vit");
    }
    return p;
}

// Patch indices of each 2x2 block, blocks in row-major order and patches in
// row-major order within a block.
inline std::vector<std::array<std::size_t, 4>> merge_2x2_blocks(const Grid& grid) {
    if (grid.rows % 2 != 0 || grid.cols % 2 != 0 || grid.rows == 0 || grid.cols == 0) {
        throw MergeIncompatibleError("cannot 2x2-merge grid (" + std::to_string(grid.rows) + ", " +
                                     std::to_string(grid.cols) + ")");
    }
    std::vector<std::array<std::size_t, 4>> blocks;
    blocks.reserve(grid.count() / 4);
    for (std::size_t br = 0; br < grid.rows / 2; ++br)
        for (std::size_t bc = 0; bc < grid.cols / 2; ++bc) {
            const std::size_t r = 2 * br, c = 2 * bc;
            blocks.push_back({r * grid.cols + c, r * grid.cols + c + 1, (r + 1) * grid.cols + c,
                              (r + 1) * grid.cols + c + 1});
        }
    return blocks;
}

// LayerNorm on every patch, then space-to-depth: [P, d_vit] -> [P/4, 4*d_vit].
inline Var spatial_merge_2x2(Tape& t, const VisionProjector& proj, Var patches, const Grid& grid) {
    const Tensor& pv = t.value(patches);
    const auto blocks = merge_2x2_blocks(grid);
    if (pv.rows() != grid.count()) {
        throw DimensionError("patch count " + std::to_string(pv.rows()) + " does not match grid (" +
                             std::to_string(grid.rows) + ", " + std::to_string(grid.cols) + ")");
    }
    const std::size_t d = pv.cols();
    Var normed = layer_norm(t, patches, t.param(proj.params, names::kMergeGamma), t.param(proj.params, names::kMergeBeta));
    std::vector<std::size_t> order;
    order.reserve(grid.count());
    for (const auto& b : blocks) order.insert(order.end(), b.begin(), b.end());
    return reshape(t, gather_rows(t, normed, std::move(order)), {blocks.size(), 4 * d});
}

// h = fc_vision_2(GELU(fc_vision_1(merge(LN(patches))))) per merged token.
inline Var project_vision(Tape& t, const VisionProjector& proj, Var patches, const Grid& grid) {
    Var m = spatial_merge_2x2(t, proj, patches, grid);
    Var z = gelu(t, affine(t, m, t.param(proj.params, names::kFc1W), t.param(proj.params, names::kFc1B)));
    return affine(t, z, t.param(proj.params, names::kFc2W), t.param(proj.params, names::kFc2B));
}

inline Var project_audio(Tape& t, const AudioProjector& proj, Var states) {
    if (t.value(states).rank() < 2) throw EmptyInputError("audio projection needs a [K, d_aud] state matrix");
    return affine(t, states, t.param(proj.params, names::kFcAudioW), t.param(proj.params, names::kFcAudioB));
}

inline Tensor spatial_merge_2x2(const VisionProjector& proj, const Tensor& patches, const Grid& grid) {
    Tape t;
    return t.value(spatial_merge_2x2(t, proj, t.constant(patches), grid));
}

inline Tensor project_vision(const VisionProjector& proj, const Tensor& patches, const Grid& grid) {
    Tape t;
    return t.value(project_vision(t, proj, t.constant(patches), grid));
}

inline Tensor project_audio(const AudioProjector& proj, const Tensor& states) {
    Tape t;
    return t.value(project_audio(t, proj, t.constant(states)));
}

} // namespace gelato
