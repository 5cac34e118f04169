#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gelato/config.hpp"
#include "gelato/ops.hpp"

namespace gelato {

struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t count() const noexcept { return rows * cols; }
    friend bool operator==(const Grid&, const Grid&) = default;
};

struct VisionTower {
    VisionConfig config;
    std::uint64_t seed = 0;
    ParamSet params;
};

struct AudioTower {
    AudioConfig config;
    std::uint64_t seed = 0;
    ParamSet params;
};

struct TextBackbone {
    TextConfig config;
    std::uint64_t seed = 0;
    ParamSet params;
};

// Low-rank deltas on the backbone's query and value projections:
// W' = W + (alpha / r) * B * A.
struct LoraAdapter {
    LoraConfig config;
    std::uint64_t seed = 0;
    ParamSet params;
};

namespace names {
inline std::string block(const std::string& tower, std::size_t i) { return tower + ".blocks." + std::to_string(i); }
inline std::string lora(std::size_t block, const char* proj, const char* mat) {
    return "lora.blocks." + std::to_string(block) + "." + proj + "." + mat;
}
inline const char* const kTextEmbed = "text.embed";
inline const char* const kTextFinalGamma = "text.final_ln.gamma";
inline const char* const kTextFinalBeta = "text.final_ln.beta";
} // namespace names

// ---------------------------------------------------------------------------
// Shape arithmetic

inline Grid patch_grid(const VisionConfig& cfg, std::size_t height, std::size_t width) {
    const std::size_t p = cfg.patch_size;
    if (height % p != 0 || width % p != 0) {
        throw PatchingError("image " + std::to_string(height) + "x" + std::to_string(width) +
                            " is not divisible by patch size " + std::to_string(p));
    }
    Grid g{height / p, width / p};
    if (g.rows % 2 != 0 || g.cols % 2 != 0) {
        throw MergeIncompatibleError("patch grid (" + std::to_string(g.rows) + ", " + std::to_string(g.cols) +
                                     ") is not even in both directions");
    }
    return g;
}

inline std::size_t audio_token_count(const AudioConfig& cfg, std::size_t samples) {
    if (samples < cfg.frame_len) {
        throw TooShortError("audio of " + std::to_string(samples) + " samples is shorter than one frame (" +
                            std::to_string(cfg.frame_len) + ")");
    }
    return (samples - cfg.frame_len) / cfg.hop + 1;
}

// ---------------------------------------------------------------------------
// Construction

namespace detail {

inline void add_block_params(ParamSet& ps, const std::string& prefix, std::size_t d, std::size_t hidden, double stddev,
                             std::uint64_t seed) {
    auto g = [&](const std::string& n, Shape s) { ps.add(n, gaussian_tensor(std::move(s), stddev, mix_seed(seed, n))); };
    ps.add(prefix + ".ln1.gamma", Tensor({d}, 1.0));
    ps.add(prefix + ".ln1.beta", Tensor({d}, 0.0));
    g(prefix + ".attn.wq", {d, d});
    g(prefix + ".attn.wk", {d, d});
    g(prefix + ".attn.wv", {d, d});
    g(prefix + ".attn.wo", {d, d});
    ps.add(prefix + ".ln2.gamma", Tensor({d}, 1.0));
    ps.add(prefix + ".ln2.beta", Tensor({d}, 0.0));
    g(prefix + ".mlp.w1", {hidden, d});
    ps.add(prefix + ".mlp.b1", Tensor({hidden}, 0.0));
    g(prefix + ".mlp.w2", {d, hidden});
    ps.add(prefix + ".mlp.b2", Tensor({d}, 0.0));
}

inline void require_heads(std::size_t d, std::size_t heads, const char* what) {
    if (d == 0 || heads == 0 || d % heads != 0) {
        throw ConfigError(std::string(what) + ": width " + std::to_string(d) + " not divisible into " +
                          std::to_string(heads) + " heads");
    }
}

} // namespace detail

inline VisionTower build_vision_tower(const ModelConfig& cfg, std::uint64_t seed) {
    const auto& v = cfg.vision;
    if (v.patch_size == 0 || v.channels == 0 || v.depth == 0 || v.mlp_hidden == 0 || v.d_mid == 0) {
        throw ConfigError("vision config dimensions must be positive");
    }
    detail::require_heads(v.d_vit, v.n_heads, "vision tower");
    patch_grid(v, v.image_height, v.image_width);
    VisionTower t{v, seed, {}};
    const std::size_t patch_dim = v.patch_size * v.patch_size * v.channels;
    t.params.add("vision.patch_embed.w",
                 gaussian_tensor({v.d_vit, patch_dim}, cfg.init_std, mix_seed(seed, "vision.patch_embed.w")));
    t.params.add("vision.patch_embed.b", Tensor({v.d_vit}, 0.0));
    for (std::size_t i = 0; i < v.depth; ++i) {
        detail::add_block_params(t.params, names::block("vision", i), v.d_vit, v.mlp_hidden, cfg.init_std, seed);
    }
    return t;
}

inline AudioTower build_audio_tower(const ModelConfig& cfg, std::uint64_t seed) {
    const auto& a = cfg.audio;
    if (a.frame_len == 0 || a.hop == 0 || a.depth == 0 || a.mlp_hidden == 0) {
        throw ConfigError("audio config dimensions must be positive");
    }
    detail::require_heads(a.d_aud, a.n_heads, "audio tower");
    AudioTower t{a, seed, {}};
    t.params.add("audio.frame_embed.w",
                 gaussian_tensor({a.d_aud, a.frame_len}, cfg.init_std, mix_seed(seed, "audio.frame_embed.w")));
    t.params.add("audio.frame_embed.b", Tensor({a.d_aud}, 0.0));
    for (std::size_t i = 0; i < a.depth; ++i) {
        detail::add_block_params(t.params, names::block("audio", i), a.d_aud, a.mlp_hidden, cfg.init_std, seed);
    }
    return t;
}

inline TextBackbone build_text_backbone(const ModelConfig& cfg, std::uint64_t seed) {
    const auto& c = cfg.text;
    if (c.depth == 0 || c.mlp_hidden == 0 || c.vocab != 257) {
        throw ConfigError("text backbone needs positive depth/hidden and the 257-entry byte vocabulary");
    }
    detail::require_heads(c.d_text, c.n_heads, "text backbone");
    if ((c.d_text / c.n_heads) % 2 != 0) throw ConfigError("rotary encoding needs an even head width");
    TextBackbone b{c, seed, {}};
    b.params.add(names::kTextEmbed,
                 gaussian_tensor({c.vocab, c.d_text}, cfg.init_std, mix_seed(seed, names::kTextEmbed)));
    for (std::size_t i = 0; i < c.depth; ++i) {
        detail::add_block_params(b.params, names::block("text", i), c.d_text, c.mlp_hidden, cfg.init_std, seed);
    }
    b.params.add(names::kTextFinalGamma, Tensor({c.d_text}, 1.0));
    b.params.add(names::kTextFinalBeta, Tensor({c.d_text}, 0.0));
    return b;
}

// Adapters emulate already-trained ones: both A and B are nonzero.
inline LoraAdapter build_lora_adapter(const ModelConfig& cfg, std::uint64_t seed) {
    const std::size_t d = cfg.text.d_text, r = cfg.lora.rank;
    if (r == 0) throw ConfigError("LoRA rank must be positive");
    LoraAdapter a{cfg.lora, seed, {}};
    for (std::size_t i = 0; i < cfg.text.depth; ++i) {
        for (const char* proj : {"q", "v"}) {
            const auto an = names::lora(i, proj, "A"), bn = names::lora(i, proj, "B");
            a.params.add(an, gaussian_tensor({r, d}, cfg.init_std, mix_seed(seed, an)));
            a.params.add(bn, gaussian_tensor({d, r}, cfg.init_std, mix_seed(seed, bn)));
        }
    }
    return a;
}

inline std::tuple<VisionTower, AudioTower, TextBackbone> build_towers(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.text.d_text == 0 || cfg.vision.d_vit == 0 || cfg.audio.d_aud == 0) {
        throw ConfigError("tower widths must be positive");
    }
    return {build_vision_tower(cfg, mix_seed(seed, "vision")), build_audio_tower(cfg, mix_seed(seed, "audio")),
            build_text_backbone(cfg, mix_seed(seed, "text"))};
}

// ---------------------------------------------------------------------------
// Forward passes

struct BlockOptions {
    std::size_t n_heads = 1;
    bool causal = false;
    bool rotary = false;
    double rope_base = 10000.0;
};

// Pre-norm transformer block. `wq` / `wv` are passed in so the backbone can
// substitute adapter-merged weights.
inline Var transformer_block(Tape& t, const ParamSet& ps, const std::string& prefix, Var x, Var wq, Var wv,
                             const BlockOptions& opt) {
    auto p = [&](const char* suffix) { return t.param(ps, prefix + suffix); };
    const std::size_t d = t.value(x).cols();
    const std::size_t dh = d / opt.n_heads;

    Var h = layer_norm(t, x, p(".ln1.gamma"), p(".ln1.beta"));
    Var q = linear(t, h, wq);
    Var k = linear(t, h, p(".attn.wk"));
    Var v = linear(t, h, wv);
    std::vector<Var> heads;
    heads.reserve(opt.n_heads);
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    for (std::size_t hd = 0; hd < opt.n_heads; ++hd) {
        Var qh = slice_cols(t, q, hd * dh, (hd + 1) * dh);
        Var kh = slice_cols(t, k, hd * dh, (hd + 1) * dh);
        if (opt.rotary) {
            qh = rope(t, qh, opt.rope_base);
            kh = rope(t, kh, opt.rope_base);
        }
        Var scores = scale(t, matmul_nt(t, qh, kh), inv_sqrt);
        Var probs = softmax_rows(t, scores, opt.causal);
        heads.push_back(matmul_nn(t, probs, slice_cols(t, v, hd * dh, (hd + 1) * dh)));
    }
    Var attn = heads.size() == 1 ? heads[0] : concat_cols(t, heads);
    x = add(t, x, linear(t, attn, p(".attn.wo")));

    Var h2 = layer_norm(t, x, p(".ln2.gamma"), p(".ln2.beta"));
    Var m = affine(t, gelu(t, affine(t, h2, p(".mlp.w1"), p(".mlp.b1"))), p(".mlp.w2"), p(".mlp.b2"));
    return add(t, x, m);
}

// Image [H, W, C] -> patch rows [P, patch*patch*C], patches in row-major grid
// order, each patch flattened as (dy, dx, channel).
inline Tensor extract_patches(const VisionConfig& cfg, const Tensor& image, Grid& grid) {
    if (image.rank() != 3 || image.shape()[2] != cfg.channels) {
        throw DimensionError("image must be [H, W, " + std::to_string(cfg.channels) + "], got " +
                             shape_str(image.shape()));
    }
    const std::size_t H = image.shape()[0], W = image.shape()[1], C = cfg.channels, p = cfg.patch_size;
    grid = patch_grid(cfg, H, W);
    Tensor patches({grid.count(), p * p * C});
    for (std::size_t r = 0; r < grid.rows; ++r)
        for (std::size_t c = 0; c < grid.cols; ++c)
            for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx)
                    for (std::size_t ch = 0; ch < C; ++ch) {
                        patches.at(r * grid.cols + c, (dy * p + dx) * C + ch) =
                            image[((r * p + dy) * W + (c * p + dx)) * C + ch];
                    }
    return patches;
}

inline Var encode_image(Tape& t, const VisionTower& tower, const Tensor& image, Grid& grid) {
    Var x = t.constant(extract_patches(tower.config, image, grid));
    x = affine(t, x, t.param(tower.params, "vision.patch_embed.w"), t.param(tower.params, "vision.patch_embed.b"));
    const BlockOptions opt{tower.config.n_heads, false, false, 0.0};
    for (std::size_t i = 0; i < tower.config.depth; ++i) {
        const auto pre = names::block("vision", i);
        x = transformer_block(t, tower.params, pre, x, t.param(tower.params, pre + ".attn.wq"),
                              t.param(tower.params, pre + ".attn.wv"), opt);
    }
    return x;
}

struct EncodedImage {
    Tensor tokens;
    Grid grid;
};

inline EncodedImage encode_image(const VisionTower& tower, const Tensor& image) {
    Tape t;
    EncodedImage out;
    out.tokens = t.value(encode_image(t, tower, image, out.grid));
    return out;
}

// Samples [T] -> frames [K, frame_len] with window starts 0, hop, 2*hop, ...
inline Tensor frame_audio(const AudioConfig& cfg, const Tensor& samples) {
    if (samples.rank() != 1) throw DimensionError("audio must be a 1-D sample tensor, got " + shape_str(samples.shape()));
    const std::size_t k = audio_token_count(cfg, samples.size());
    Tensor frames({k, cfg.frame_len});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < cfg.frame_len; ++j) frames.at(i, j) = samples[i * cfg.hop + j];
    return frames;
}

inline Var encode_audio(Tape& t, const AudioTower& tower, const Tensor& samples) {
    Var x = t.constant(frame_audio(tower.config, samples));
    x = affine(t, x, t.param(tower.params, "audio.frame_embed.w"), t.param(tower.params, "audio.frame_embed.b"));
    const BlockOptions opt{tower.config.n_heads, false, false, 0.0};
    for (std::size_t i = 0; i < tower.config.depth; ++i) {
        const auto pre = names::block("audio", i);
        x = transformer_block(t, tower.params, pre, x, t.param(tower.params, pre + ".attn.wq"),
                              t.param(tower.params, pre + ".attn.wv"), opt);
    }
    return x;
}

inline Tensor encode_audio(const AudioTower& tower, const Tensor& samples) {
    Tape t;
    return t.value(encode_audio(t, tower, samples));
}

// Adapter-merged projection weight; with no adapter, the base weight leaf.
inline Var adapted_weight(Tape& t, const TextBackbone& bb, const LoraAdapter* adapter, std::size_t block,
                          const char* proj) {
    Var w = t.param(bb.params, names::block("text", block) + ".attn.w" + proj);
    if (!adapter) return w;
    const double s = adapter->config.alpha / double(adapter->config.rank);
    Var delta = matmul_nn(t, t.param(adapter->params, names::lora(block, proj, "B")),
                          t.param(adapter->params, names::lora(block, proj, "A")));
    return add(t, w, scale(t, delta, s));
}

// Causal transformer over input states [T, d_text] with the adapter applied to
// the query and value projections. Differentiable w.r.t. the states.
inline Var run_backbone(Tape& t, const TextBackbone& bb, const LoraAdapter* adapter, Var states) {
    const Tensor& sv = t.value(states);
    if (sv.rank() != 2) throw EmptyInputError("backbone needs a non-empty [T, d_text] state matrix");
    if (sv.cols() != bb.config.d_text) {
        throw DimensionError("backbone states " + shape_str(sv.shape()) + " do not have width " +
                             std::to_string(bb.config.d_text));
    }
    const BlockOptions opt{bb.config.n_heads, true, true, bb.config.rope_base};
    Var x = states;
    for (std::size_t i = 0; i < bb.config.depth; ++i) {
        x = transformer_block(t, bb.params, names::block("text", i), x, adapted_weight(t, bb, adapter, i, "q"),
                              adapted_weight(t, bb, adapter, i, "v"), opt);
    }
    return layer_norm(t, x, t.param(bb.params, names::kTextFinalGamma), t.param(bb.params, names::kTextFinalBeta));
}

inline Tensor run_backbone(const TextBackbone& bb, const Tensor& states, const LoraAdapter* adapter) {
    Tape t;
    return t.value(run_backbone(t, bb, adapter, t.constant(states)));
}

// Every projection weight the backbone uses, with adapter deltas merged in.
inline std::map<std::string, Tensor> effective_weights(const TextBackbone& bb, const LoraAdapter* adapter) {
    std::map<std::string, Tensor> out;
    Tape t;
    for (std::size_t i = 0; i < bb.config.depth; ++i) {
        const auto pre = names::block("text", i) + ".attn.w";
        out[pre + "q"] = t.value(adapted_weight(t, bb, adapter, i, "q"));
        out[pre + "k"] = bb.params.get(pre + "k");
        out[pre + "v"] = t.value(adapted_weight(t, bb, adapter, i, "v"));
        out[pre + "o"] = bb.params.get(pre + "o");
    }
    return out;
}

} // namespace gelato
