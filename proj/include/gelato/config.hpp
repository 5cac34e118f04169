#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gelato/tensor.hpp"

namespace gelato {

// Small: all four delimiter embeddings are trainable. Nano: only the audio pair.
enum class Profile { small, nano };

inline std::string to_string(Profile p) { return p == Profile::small ? "small" : "nano"; }
inline Profile profile_from_string(const std::string& s) {
    if (s == "small") return Profile::small;
    if (s == "nano") return Profile::nano;
    throw ConfigError("unknown profile '" + s + "'");
}

struct TextConfig {
    std::size_t d_text = 64;
    std::size_t depth = 2;
    std::size_t n_heads = 4;
    std::size_t mlp_hidden = 256;
    std::size_t vocab = 257; // 256 bytes + pad
    double rope_base = 10000.0;
};

struct VisionConfig {
    std::size_t patch_size = 2;
    std::size_t channels = 3;
    std::size_t d_vit = 16;
    std::size_t depth = 2;
    std::size_t n_heads = 2;
    std::size_t mlp_hidden = 64;
    std::size_t d_mid = 64; // fc_vision_1 output width
    // Nominal input size, validated at build time for merge compatibility.
    std::size_t image_height = 8;
    std::size_t image_width = 8;
};

struct AudioConfig {
    std::size_t frame_len = 16;
    std::size_t hop = 8;
    std::size_t d_aud = 48;
    std::size_t depth = 2;
    std::size_t n_heads = 4;
    std::size_t mlp_hidden = 96;
};

struct LoraConfig {
    std::size_t rank = 4;
    double alpha = 8.0;
};

struct ModelConfig {
    Profile profile = Profile::small;
    TextConfig text;
    VisionConfig vision;
    AudioConfig audio;
    LoraConfig lora;
    double init_std = 0.02;

    static ModelConfig toy() { return {}; }

    // Dimension relationships of the released models, with depth cut to one
    // block so construction stays cheap. Used for shape checks only.
    static ModelConfig released_small_shape() {
        ModelConfig c;
        c.profile = Profile::small;
        c.text = {1024, 1, 8, 1024, 257, 10000.0};
        c.vision = {2, 3, 1024, 1, 8, 1024, 4096, 8, 8};
        c.audio = {16, 8, 1280, 1, 8, 1280};
        return c;
    }
    static ModelConfig released_nano_shape() {
        ModelConfig c;
        c.profile = Profile::nano;
        c.text = {768, 1, 8, 768, 257, 10000.0};
        c.vision = {2, 3, 768, 1, 8, 768, 3072, 8, 8};
        c.audio = {16, 8, 1280, 1, 8, 1280};
        return c;
    }
};

inline nlohmann::json to_json(const ModelConfig& c) {
    using nlohmann::json;
    return json{
        {"profile", to_string(c.profile)},
        {"init_std", c.init_std},
        {"text",
         {{"d_text", c.text.d_text},
          {"depth", c.text.depth},
          {"n_heads", c.text.n_heads},
          {"mlp_hidden", c.text.mlp_hidden},
          {"vocab", c.text.vocab},
          {"rope_base", c.text.rope_base}}},
        {"vision",
         {{"patch_size", c.vision.patch_size},
          {"channels", c.vision.channels},
          {"d_vit", c.vision.d_vit},
          {"depth", c.vision.depth},
          {"n_heads", c.vision.n_heads},
          {"mlp_hidden", c.vision.mlp_hidden},
          {"d_mid", c.vision.d_mid},
          {"image_height", c.vision.image_height},
          {"image_width", c.vision.image_width}}},
        {"audio",
         {{"frame_len", c.audio.frame_len},
          {"hop", c.audio.hop},
          {"d_aud", c.audio.d_aud},
          {"depth", c.audio.depth},
          {"n_heads", c.audio.n_heads},
          {"mlp_hidden", c.audio.mlp_hidden}}},
        {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.profile = profile_from_string(j.at("profile").get<std::string>());
        c.init_std = j.at("init_std").get<double>();
        const auto& t = j.at("text");
        c.text = {t.at("d_text"), t.at("depth"), t.at("n_heads"), t.at("mlp_hidden"), t.at("vocab"), t.at("rope_base")};
        const auto& v = j.at("vision");
        c.vision = {v.at("patch_size"), v.at("channels"), v.at("d_vit"),        v.at("depth"),       v.at("n_heads"),
                    v.at("mlp_hidden"), v.at("d_mid"),    v.at("image_height"), v.at("image_width")};
        const auto& a = j.at("audio");
        c.audio = {a.at("frame_len"), a.at("hop"), a.at("d_aud"), a.at("depth"), a.at("n_heads"), a.at("mlp_hidden")};
        c.lora = {j.at("lora").at("rank"), j.at("lora").at("alpha")};
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("malformed model config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Seeded initialization. Each tensor draws from its own stream keyed by
// (seed, name), so values do not depend on construction order.

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline Tensor gaussian_tensor(Shape shape, double stddev, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / double(fan_in + fan_out));
}

// Weight [fan_out, fan_in] drawn from U(-b, b), b = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t fan_out, std::size_t fan_in, std::uint64_t seed) {
    const double b = xavier_bound(fan_in, fan_out);
    return uniform_tensor({fan_out, fan_in}, -b, b, seed);
}

} // namespace gelato
