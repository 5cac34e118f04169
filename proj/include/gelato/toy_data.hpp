#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gelato/trainer.hpp"

namespace gelato {

// Paired synthetic data: both sides are noisy linear views of a shared
// Gaussian latent, so alignment is learnable through the projectors alone.
enum class ViewKind { image, audio };

struct LatentViewSpec {
    std::size_t latent_dim = 8;
    double noise = 0.1;
    std::size_t audio_samples = 40;
    std::uint64_t seed = 7;
};

namespace detail {
inline Shape view_shape(const ModelConfig& cfg, ViewKind kind, const LatentViewSpec& spec) {
    if (kind == ViewKind::image) return {cfg.vision.image_height, cfg.vision.image_width, cfg.vision.channels};
    return {spec.audio_samples};
}

inline Tensor linear_view(const Tensor& map, const std::vector<double>& z, const Shape& shape, double noise,
                          std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> out(map.rows(), 0.0);
    for (std::size_t r = 0; r < map.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < z.size(); ++c) acc += map.at(r, c) * z[c];
        out[r] = acc + noise * n01(rng);
    }
    return Tensor(shape, std::move(out));
}
} // namespace detail

// Pairs [offset, offset + n) of an endless stream; disjoint offsets give
// disjoint latents, which is how held-out sets are drawn.
inline PairDataset make_latent_pairs(const ModelConfig& cfg, ViewKind left, ViewKind right, std::size_t n,
                                     const LatentViewSpec& spec, std::size_t offset = 0, std::string name = "latent") {
    const Shape ls = detail::view_shape(cfg, left, spec), rs = detail::view_shape(cfg, right, spec);
    const double s = 1.0 / std::sqrt(double(spec.latent_dim));
    const Tensor lmap = gaussian_tensor({shape_size(ls), spec.latent_dim}, s, mix_seed(spec.seed, "left.map"));
    const Tensor rmap = gaussian_tensor({shape_size(rs), spec.latent_dim}, s, mix_seed(spec.seed, "right.map"));
    auto make = [](ViewKind k, Tensor t) {
        return k == ViewKind::image ? InputItem::make_image(std::move(t)) : InputItem::make_audio(std::move(t));
    };
    PairDataset ds;
    ds.name = std::move(name);
    for (std::size_t i = offset; i < offset + n; ++i) {
        std::mt19937_64 rng(mix_seed(spec.seed, "pair." + std::to_string(i)));
        std::normal_distribution<double> n01(0.0, 1.0);
        std::vector<double> z(spec.latent_dim);
        for (auto& v : z) v = n01(rng);
        ds.pairs.emplace_back(make(left, detail::linear_view(lmap, z, ls, spec.noise, rng)),
                              make(right, detail::linear_view(rmap, z, rs, spec.noise, rng)));
    }
    return ds;
}

// Media <-> caption pairs over a fixed set of classes. Each class has a
// prototype view; samples add noise. Captions end in a class-specific byte so
// the last-token state can tell them apart.
struct ClassDataSpec {
    std::size_t classes = 8;
    double noise = 0.3;
    std::size_t audio_samples = 40;
    std::uint64_t seed = 11;
};

inline std::string class_caption(std::size_t c) {
    return "class " + std::string(1, char('A' + c % 26)) + std::to_string(c / 26);
}

inline PairDataset make_class_pairs(const ModelConfig& cfg, ViewKind media, std::size_t n, const ClassDataSpec& spec,
                                    std::size_t offset = 0, std::string name = "classes") {
    if (spec.classes == 0) throw ConfigError("class data needs at least one class");
    LatentViewSpec shape_spec;
    shape_spec.audio_samples = spec.audio_samples;
    const Shape shape = detail::view_shape(cfg, media, shape_spec);
    std::vector<Tensor> protos;
    for (std::size_t c = 0; c < spec.classes; ++c)
        protos.push_back(gaussian_tensor(shape, 1.0, mix_seed(spec.seed, "proto." + std::to_string(c))));
    PairDataset ds;
    ds.name = std::move(name);
    for (std::size_t i = offset; i < offset + n; ++i) {
        const std::size_t c = i % spec.classes;
        Tensor x = gaussian_tensor(shape, spec.noise, mix_seed(spec.seed, "sample." + std::to_string(i)));
        for (std::size_t j = 0; j < x.size(); ++j) x[j] += protos[c][j];
        InputItem item = media == ViewKind::image ? InputItem::make_image(std::move(x)) : InputItem::make_audio(std::move(x));
        ds.pairs.emplace_back(std::move(item), InputItem::make_text(class_caption(c)));
    }
    return ds;
}

// Random valid item of any kind; mixed items hold 1-4 non-mixed children.
inline InputItem random_item(const ModelConfig& cfg, std::mt19937_64& rng, bool allow_mixed = true) {
    std::uniform_int_distribution<int> kind_d(0, allow_mixed ? 4 : 3);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto image = [&] {
        const std::size_t step = 2 * cfg.vision.patch_size;
        return gaussian_tensor({step * pick(1, 3), step * pick(1, 3), cfg.vision.channels}, 1.0, rng());
    };
    auto audio = [&] { return gaussian_tensor({cfg.audio.frame_len + pick(0, 6 * cfg.audio.hop)}, 1.0, rng()); };
    switch (kind_d(rng)) {
    case 0: {
        std::string s(pick(1, 12), ' ');
        for (auto& c : s) c = char(pick(0, 255));
        return InputItem::make_text(std::move(s));
    }
    case 1: return InputItem::make_image(image());
    case 2: return InputItem::make_audio(audio());
    case 3: {
        std::vector<Tensor> frames;
        const Tensor first = image();
        frames.push_back(first);
        for (std::size_t f = pick(1, 3); f > 1; --f) frames.push_back(gaussian_tensor(first.shape(), 1.0, rng()));
        std::optional<Tensor> track;
        if (pick(0, 1)) track = audio();
        return InputItem::make_video(std::move(frames), std::move(track));
    }
    default: {
        std::vector<InputItem> kids;
        for (std::size_t n = pick(1, 4); n > 0; --n) kids.push_back(random_item(cfg, rng, false));
        return InputItem::make_mixed(std::move(kids));
    }
    }
}

inline std::shared_ptr<const PairDataset> share(PairDataset d) {
    return std::make_shared<const PairDataset>(std::move(d));
}

} // namespace gelato
