#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gelato/bundle.hpp"
#include "gelato/sequencer.hpp"
#include "gelato/trainer.hpp"

namespace gelato {

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlign = 64;

// ---------------------------------------------------------------------------
// Little-endian byte helpers

namespace io {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(char(v)); }
template <class T>
inline void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, double v) { put_le(out, std::bit_cast<std::uint32_t>(float(v))); }

// Bounds-checked cursor over an in-memory buffer.
class Reader {
public:
    Reader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

    std::size_t pos() const { return pos_; }
    void seek(std::size_t p) {
        if (p > buf_.size()) fail("offset " + std::to_string(p) + " past end of file");
        pos_ = p;
    }
    void need(std::size_t n) const {
        if (n > buf_.size() || pos_ > buf_.size() - n) fail("truncated at byte " + std::to_string(pos_));
    }
    template <class T>
    T le() {
        need(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return T(v);
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    double f32() { return double(std::bit_cast<float>(le<std::uint32_t>())); }

    [[noreturn]] void fail(const std::string& msg) const { throw IntegrityError(what_ + ": " + msg); }

private:
    const std::string& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

} // namespace io

// ---------------------------------------------------------------------------
// Checkpoint manifest

struct CheckpointManifest {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::vector<TaskVariant> variants;
    std::vector<std::size_t> k_set;
    std::string scope = "projector_only";
    std::size_t creation_step = 0;
    double tau = 0.02;
};

inline nlohmann::json to_json(const CheckpointManifest& m) {
    nlohmann::json vars = nlohmann::json::array();
    for (auto v : m.variants) vars.push_back(to_string(v));
    return {{"format_version", kCheckpointVersion},
            {"model", to_json(m.config)},
            {"seed", m.seed},
            {"variants", vars},
            {"k_set", m.k_set},
            {"scope", m.scope},
            {"creation_step", m.creation_step},
            {"tau", m.tau}};
}

inline CheckpointManifest manifest_from_json(const nlohmann::json& j) {
    try {
        CheckpointManifest m;
        if (j.at("format_version").get<int>() != kCheckpointVersion) {
            throw IntegrityError("unsupported checkpoint version " + j.at("format_version").dump());
        }
        m.config = model_config_from_json(j.at("model"));
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& v : j.at("variants")) m.variants.push_back(task_from_string(v.get<std::string>()));
        m.k_set = j.at("k_set").get<std::vector<std::size_t>>();
        m.scope = j.at("scope").get<std::string>();
        m.creation_step = j.at("creation_step").get<std::size_t>();
        m.tau = j.at("tau").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("malformed checkpoint manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw IntegrityError(std::string("malformed checkpoint manifest: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shape table

namespace detail {
inline void block_shapes(std::map<std::string, Shape>& out, const std::string& prefix, std::size_t d, std::size_t h) {
    for (const char* n : {".ln1.gamma", ".ln1.beta", ".ln2.gamma", ".ln2.beta", ".mlp.b2"}) out[prefix + n] = {d};
    for (const char* n : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) out[prefix + n] = {d, d};
    out[prefix + ".mlp.w1"] = {h, d};
    out[prefix + ".mlp.b1"] = {h};
    out[prefix + ".mlp.w2"] = {d, h};
}
} // namespace detail

// Shapes of the frozen tensors shared by all variants.
inline std::map<std::string, Shape> shared_shapes(const ModelConfig& cfg) {
    std::map<std::string, Shape> out;
    const auto& t = cfg.text;
    const auto& v = cfg.vision;
    const auto& a = cfg.audio;
    out[names::kTextEmbed] = {t.vocab, t.d_text};
    for (std::size_t i = 0; i < t.depth; ++i) detail::block_shapes(out, names::block("text", i), t.d_text, t.mlp_hidden);
    out[names::kTextFinalGamma] = out[names::kTextFinalBeta] = {t.d_text};
    out["vision.patch_embed.w"] = {v.d_vit, v.patch_size * v.patch_size * v.channels};
    out["vision.patch_embed.b"] = {v.d_vit};
    for (std::size_t i = 0; i < v.depth; ++i) detail::block_shapes(out, names::block("vision", i), v.d_vit, v.mlp_hidden);
    out["audio.frame_embed.w"] = {a.d_aud, a.frame_len};
    out["audio.frame_embed.b"] = {a.d_aud};
    for (std::size_t i = 0; i < a.depth; ++i) detail::block_shapes(out, names::block("audio", i), a.d_aud, a.mlp_hidden);
    out[names::kMergeGamma] = out[names::kMergeBeta] = {v.d_vit};
    out[names::kFc1W] = {v.d_mid, 4 * v.d_vit};
    out[names::kFc1B] = {v.d_mid};
    return out;
}

// Shapes of one variant's tensors (unprefixed names).
inline std::map<std::string, Shape> task_shapes(const ModelConfig& cfg) {
    std::map<std::string, Shape> out;
    const std::size_t d = cfg.text.d_text, r = cfg.lora.rank;
    for (std::size_t i = 0; i < cfg.text.depth; ++i)
        for (const char* p : {"q", "v"}) {
            out[names::lora(i, p, "A")] = {r, d};
            out[names::lora(i, p, "B")] = {d, r};
        }
    out[names::kFc2W] = {d, cfg.vision.d_mid};
    out[names::kFc2B] = {d};
    out[names::kFcAudioW] = {d, cfg.audio.d_aud};
    out[names::kFcAudioB] = {d};
    for (const char* n : {names::kVisionStart, names::kVisionEnd, names::kAudioStart, names::kAudioEnd}) out[n] = {d};
    return out;
}

inline std::string task_tensor_name(TaskVariant t, const std::string& name) { return "task." + to_string(t) + "." + name; }

// Trainable by default after a load; matches the fresh initialization.
inline bool default_trainable(const std::string& name, Profile profile) {
    auto sw = [&](const char* p) { return name.rfind(p, 0) == 0; };
    return sw("fc_vision_2.") || sw("fc_audio.") || sw("delim.audio_") || (sw("delim.vision_") && profile == Profile::small);
}

// ---------------------------------------------------------------------------
// Writing

inline std::string encode_checkpoint(const ModelPackage& pkg, const CheckpointManifest& manifest) {
    CheckpointManifest m = manifest;
    m.config = pkg.shared.config;
    m.seed = pkg.shared.seed;
    m.variants.clear();
    for (const auto& [t, _] : pkg.variants) m.variants.push_back(t);

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (const ParamSet* s : {&pkg.shared.text.params, &pkg.shared.vision.params, &pkg.shared.audio.params,
                              &pkg.shared.vision_merger})
        for (const auto& [n, e] : *s) tensors.emplace_back(n, e.value.get());
    for (const auto& [t, w] : pkg.variants)
        for (const ParamSet* s : {&w.lora.params, &w.fc_vision_2, &w.fc_audio, &w.delimiters.params})
            for (const auto& [n, e] : *s) tensors.emplace_back(task_tensor_name(t, n), e.value.get());
    std::sort(tensors.begin(), tensors.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    std::string out = "GELA";
    io::put_le<std::uint16_t>(out, kCheckpointVersion);
    const std::string js = to_json(m).dump();
    io::put_le<std::uint32_t>(out, std::uint32_t(js.size()));
    out += js;
    io::put_le<std::uint32_t>(out, std::uint32_t(tensors.size()));

    std::size_t index_bytes = 0;
    for (const auto& [n, t] : tensors) index_bytes += 2 + n.size() + 1 + 8 * t->rank() + 8;
    auto align = [](std::size_t x) { return (x + kPayloadAlign - 1) / kPayloadAlign * kPayloadAlign; };
    std::size_t offset = align(out.size() + index_bytes);
    std::vector<std::size_t> offsets;
    for (const auto& [n, t] : tensors) {
        if (n.size() > 0xffff) throw ConfigError("tensor name too long: " + n);
        io::put_le<std::uint16_t>(out, std::uint16_t(n.size()));
        out += n;
        io::put_u8(out, std::uint8_t(t->rank()));
        for (auto d : t->shape()) io::put_le<std::uint64_t>(out, d);
        io::put_le<std::uint64_t>(out, offset);
        offsets.push_back(offset);
        offset = align(offset + 4 * t->size());
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        out.resize(offsets[i], '\0');
        for (double v : tensors[i].second->values()) io::put_f32(out, v);
    }
    return out;
}

inline void save_checkpoint(const ModelPackage& pkg, const CheckpointManifest& manifest,
                            const std::filesystem::path& path) {
    io::write_file(path, encode_checkpoint(pkg, manifest));
}

// ---------------------------------------------------------------------------
// Reading

struct IndexEntry {
    Shape shape;
    std::uint64_t offset = 0;
};

// Parsed header + index over a checkpoint held in memory. Every indexed
// tensor is bounds- and shape-checked on open.
class CheckpointFile {
public:
    explicit CheckpointFile(const std::filesystem::path& path) : path_(path.string()), buf_(io::read_file(path)) {
        parse();
    }

    const std::string& path() const { return path_; }
    const CheckpointManifest& manifest() const { return manifest_; }
    const std::map<std::string, IndexEntry>& index() const { return index_; }
    bool has_variant(TaskVariant t) const {
        return std::find(manifest_.variants.begin(), manifest_.variants.end(), t) != manifest_.variants.end();
    }

    Tensor read(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw IntegrityError(path_ + ": tensor '" + name + "' missing from index");
        io::Reader r(buf_, path_);
        r.seek(it->second.offset);
        std::vector<double> vals(shape_size(it->second.shape));
        for (auto& v : vals) v = r.f32();
        return Tensor(it->second.shape, std::move(vals));
    }

    ParamSet read_set(const std::vector<std::string>& names, const std::string& prefix = "") const {
        ParamSet ps;
        for (const auto& n : names) ps.add(n, read(prefix + n), default_trainable(n, manifest_.config.profile));
        return ps;
    }

private:
    void parse() {
        io::Reader r(buf_, path_);
        if (r.bytes(4) != "GELA") r.fail("bad magic");
        const auto version = r.le<std::uint16_t>();
        if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
        const auto mlen = r.le<std::uint32_t>();
        const std::string mjs = r.bytes(mlen);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(mjs);
        } catch (const nlohmann::json::exception& e) {
            r.fail(std::string("manifest is not valid JSON: ") + e.what());
        }
        manifest_ = manifest_from_json(j);

        std::map<std::string, Shape> expected;
        for (auto& [n, s] : shared_shapes(manifest_.config)) expected[n] = s;
        for (auto t : manifest_.variants)
            for (auto& [n, s] : task_shapes(manifest_.config)) expected[task_tensor_name(t, n)] = s;

        const auto count = r.le<std::uint32_t>();
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto nlen = r.le<std::uint16_t>();
            std::string name = r.bytes(nlen);
            const auto rank = r.le<std::uint8_t>();
            IndexEntry e;
            for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(std::size_t(r.le<std::uint64_t>()));
            e.offset = r.le<std::uint64_t>();
            auto exp = expected.find(name);
            if (exp == expected.end()) r.fail("unexpected tensor '" + name + "'");
            if (exp->second != e.shape) {
                r.fail("tensor '" + name + "' has shape " + shape_str(e.shape) + ", manifest implies " +
                       shape_str(exp->second));
            }
            if (e.offset % kPayloadAlign != 0) r.fail("tensor '" + name + "' payload is not aligned");
            const std::uint64_t bytes = 4 * std::uint64_t(shape_size(e.shape));
            if (e.offset > buf_.size() || bytes > buf_.size() - e.offset) {
                r.fail("truncated: tensor '" + name + "' extends past end of file");
            }
            if (!index_.emplace(std::move(name), e).second) r.fail("duplicate tensor in index");
        }
        for (const auto& [n, _] : expected)
            if (!index_.count(n)) r.fail("tensor '" + n + "' missing from index");
    }

    std::string path_;
    std::string buf_;
    CheckpointManifest manifest_;
    std::map<std::string, IndexEntry> index_;
};

namespace detail {
inline std::vector<std::string> keys(const std::map<std::string, Shape>& m, const char* prefix = nullptr) {
    std::vector<std::string> out;
    for (const auto& [n, _] : m)
        if (!prefix || n.rfind(prefix, 0) == 0) out.push_back(n);
    return out;
}

inline TaskWeights read_task(const CheckpointFile& f, TaskVariant t, Modality m) {
    const auto shapes = task_shapes(f.manifest().config);
    const std::string pre = task_tensor_name(t, "");
    TaskWeights w;
    w.lora = LoraAdapter{f.manifest().config.lora, mix_seed(f.manifest().seed, "lora." + to_string(t)),
                         f.read_set(keys(shapes, "lora."), pre)};
    if (has_vision(m)) {
        w.fc_vision_2 = f.read_set(keys(shapes, "fc_vision_2."), pre);
        w.delimiters.params.merge_from(f.read_set(keys(shapes, "delim.vision_"), pre));
    }
    if (has_audio(m)) {
        w.fc_audio = f.read_set(keys(shapes, "fc_audio."), pre);
        w.delimiters.params.merge_from(f.read_set(keys(shapes, "delim.audio_"), pre));
    }
    return w;
}
} // namespace detail

inline std::pair<ModelPackage, CheckpointManifest> load_package(const std::filesystem::path& path) {
    CheckpointFile f(path);
    const auto& cfg = f.manifest().config;
    const auto shapes = shared_shapes(cfg);
    ModelPackage pkg;
    pkg.shared.config = cfg;
    pkg.shared.seed = f.manifest().seed;
    const auto towers = std::tuple{mix_seed(pkg.shared.seed, "vision"), mix_seed(pkg.shared.seed, "audio"),
                                   mix_seed(pkg.shared.seed, "text")};
    pkg.shared.text = TextBackbone{cfg.text, std::get<2>(towers), f.read_set(detail::keys(shapes, "text."))};
    pkg.shared.vision = VisionTower{cfg.vision, std::get<0>(towers), f.read_set(detail::keys(shapes, "vision."))};
    pkg.shared.audio = AudioTower{cfg.audio, std::get<1>(towers), f.read_set(detail::keys(shapes, "audio."))};
    pkg.shared.vision_merger = f.read_set(detail::keys(shapes, "vision_proj."));
    for (auto t : f.manifest().variants) pkg.variants.emplace(t, detail::read_task(f, t, Modality::omni));
    return {std::move(pkg), f.manifest()};
}

// Loads only what (task, modality) needs.
inline ModelBundle load(const std::filesystem::path& path, TaskVariant task, Modality modality) {
    CheckpointFile f(path);
    if (!f.has_variant(task)) {
        throw VariantNotFoundError("checkpoint '" + path.string() + "' has no variant '" + to_string(task) + "'");
    }
    const auto& cfg = f.manifest().config;
    const auto shapes = shared_shapes(cfg);
    TaskWeights w = detail::read_task(f, task, modality);
    ModelBundle b;
    b.config = cfg;
    b.task = task;
    b.modality = modality;
    b.source = path.string();
    b.text = TextBackbone{cfg.text, mix_seed(f.manifest().seed, "text"), f.read_set(detail::keys(shapes, "text."))};
    b.lora = std::move(w.lora);
    if (has_vision(modality)) {
        b.vision = VisionTower{cfg.vision, mix_seed(f.manifest().seed, "vision"), f.read_set(detail::keys(shapes, "vision."))};
        b.vision_proj = make_vision_projector(f.read_set(detail::keys(shapes, "vision_proj.")), w.fc_vision_2);
    }
    if (has_audio(modality)) {
        b.audio = AudioTower{cfg.audio, mix_seed(f.manifest().seed, "audio"), f.read_set(detail::keys(shapes, "audio."))};
        b.audio_proj = AudioProjector{std::move(w.fc_audio)};
    }
    b.delimiters = std::move(w.delimiters);
    return b;
}

namespace detail {
// New bundle over the same frozen towers with another variant's weights.
inline ModelBundle rebind(const ModelBundle& b, TaskVariant task, TaskWeights w) {
    ModelBundle out;
    out.config = b.config;
    out.task = task;
    out.modality = b.modality;
    out.source = b.source;
    out.text = b.text;
    out.vision = b.vision;
    out.audio = b.audio;
    out.lora = std::move(w.lora);
    if (b.vision_proj) {
        ParamSet merger;
        for (const char* n : {names::kMergeGamma, names::kMergeBeta, names::kFc1W, names::kFc1B})
            merger.add_shared(n, b.vision_proj->params.storage(n), b.vision_proj->params.trainable(n));
        out.vision_proj = make_vision_projector(merger, w.fc_vision_2);
    }
    if (b.audio_proj) out.audio_proj = AudioProjector{std::move(w.fc_audio)};
    out.delimiters.params = detail::select_delimiters(w.delimiters.params, b.modality);
    return out;
}
} // namespace detail

// Swaps adapter, projector heads and delimiters; tower tensors keep their storage.
inline ModelBundle switch_task(const ModelBundle& b, TaskVariant task) {
    if (b.source.empty()) throw VariantNotFoundError("bundle has no source checkpoint to switch from");
    CheckpointFile f(b.source);
    if (!f.has_variant(task)) {
        throw VariantNotFoundError("checkpoint '" + b.source + "' has no variant '" + to_string(task) + "'");
    }
    return detail::rebind(b, task, detail::read_task(f, task, b.modality));
}

inline ModelBundle switch_task(const ModelPackage& pkg, const ModelBundle& b, TaskVariant task) {
    auto it = pkg.variants.find(task);
    if (it == pkg.variants.end()) throw VariantNotFoundError("task variant '" + to_string(task) + "' not present");
    return detail::rebind(b, task, it->second);
}

// ---------------------------------------------------------------------------
// Media Tensor File

inline std::string encode_mtf(const Tensor& t) {
    std::string out = "MTF1";
    io::put_u8(out, std::uint8_t(t.rank()));
    for (auto d : t.shape()) io::put_le<std::uint32_t>(out, std::uint32_t(d));
    for (double v : t.values()) io::put_f32(out, v);
    return out;
}

inline Tensor decode_mtf(const std::string& buf, const std::string& what) {
    io::Reader r(buf, what);
    if (r.bytes(4) != "MTF1") r.fail("bad magic");
    const auto rank = r.le<std::uint8_t>();
    if (rank == 0) r.fail("rank 0 media tensor");
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) {
        const auto d = r.le<std::uint32_t>();
        if (d == 0) r.fail("zero-length dimension");
        shape.push_back(d);
    }
    const std::size_t n = shape_size(shape);
    r.need(4 * n);
    std::vector<double> vals(n);
    for (auto& v : vals) v = r.f32();
    if (r.pos() != buf.size()) r.fail("trailing bytes after payload");
    return Tensor(shape, std::move(vals));
}

inline void write_mtf(const std::filesystem::path& path, const Tensor& t) { io::write_file(path, encode_mtf(t)); }
inline Tensor read_mtf(const std::filesystem::path& path) { return decode_mtf(io::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Item manifests (one JSON record per line)
//
//   {"text": "..."}  {"image": "a.mtf"}  {"audio": "b.mtf"}
//   {"video": ["f0.mtf", ...], "audio": "track.mtf"}  {"mixed": [item, ...]}
//
// Media paths are relative to the manifest's directory.

inline InputItem item_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    auto media = [&](const nlohmann::json& p) {
        if (!p.is_string()) throw IoError("media reference must be a path string");
        return read_mtf(base / p.get<std::string>());
    };
    if (!j.is_object()) throw IoError("item record must be an object");
    if (j.contains("text")) return InputItem::make_text(j.at("text").get<std::string>());
    if (j.contains("image")) return InputItem::make_image(media(j.at("image")));
    if (j.contains("video")) {
        std::vector<Tensor> frames;
        for (const auto& f : j.at("video")) frames.push_back(media(f));
        std::optional<Tensor> track;
        if (j.contains("audio")) track = media(j.at("audio"));
        return InputItem::make_video(std::move(frames), std::move(track));
    }
    if (j.contains("audio")) return InputItem::make_audio(media(j.at("audio")));
    if (j.contains("mixed")) {
        std::vector<InputItem> kids;
        for (const auto& c : j.at("mixed")) kids.push_back(item_from_json(c, base));
        return InputItem::make_mixed(std::move(kids));
    }
    throw IoError("item record has none of text/image/audio/video/mixed");
}

// Writes an item's media next to `dir/stem*` and returns its record.
inline nlohmann::json item_to_json(const InputItem& it, const std::filesystem::path& dir, const std::string& stem) {
    using K = InputItem::Kind;
    auto put = [&](const Tensor& t, const std::string& suffix) {
        const std::string file = stem + suffix + ".mtf";
        write_mtf(dir / file, t);
        return file;
    };
    switch (it.kind) {
    case K::text: return {{"text", it.text}};
    case K::image: return {{"image", put(it.image, "")}};
    case K::audio: return {{"audio", put(it.samples, "")}};
    case K::video: {
        nlohmann::json frames = nlohmann::json::array();
        for (std::size_t i = 0; i < it.frames.size(); ++i) frames.push_back(put(it.frames[i], ".f" + std::to_string(i)));
        nlohmann::json j{{"video", frames}};
        if (it.video_audio) j["audio"] = put(*it.video_audio, ".track");
        return j;
    }
    case K::mixed: {
        nlohmann::json kids = nlohmann::json::array();
        for (std::size_t i = 0; i < it.children.size(); ++i)
            kids.push_back(item_to_json(it.children[i], dir, stem + ".c" + std::to_string(i)));
        return {{"mixed", kids}};
    }
    }
    return {};
}

namespace detail {
inline std::string dump_record(const nlohmann::json& j) {
    try {
        return j.dump();
    } catch (const nlohmann::json::type_error&) {
        throw IoError("manifest text must be valid UTF-8");
    }
}

template <class F>
inline void for_each_record(const std::filesystem::path& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            f(nlohmann::json::parse(line), lineno);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const IoError& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}
} // namespace detail

// Pair manifest records: {"left": item, "right": item}.
inline PairDataset read_pair_manifest(const std::filesystem::path& path) {
    PairDataset ds;
    ds.name = path.stem().string();
    const auto base = path.parent_path();
    detail::for_each_record(path, [&](const nlohmann::json& j, std::size_t) {
        ds.pairs.emplace_back(item_from_json(j.at("left"), base), item_from_json(j.at("right"), base));
    });
    return ds;
}

inline void write_pair_manifest(const std::filesystem::path& path, const PairDataset& ds) {
    const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
    const std::string stem = path.stem().string();
    std::string out;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        nlohmann::json j{{"left", item_to_json(ds.pairs[i].first, dir, stem + "." + std::to_string(i) + ".l")},
                         {"right", item_to_json(ds.pairs[i].second, dir, stem + "." + std::to_string(i) + ".r")}};
        out += detail::dump_record(j) + "\n";
    }
    io::write_file(path, out);
}

struct NamedItem {
    std::string id;
    InputItem item;
};

// Embedding input records: {"id": "...", <item fields>}; ids default to the line number.
inline std::vector<NamedItem> read_item_manifest(const std::filesystem::path& path) {
    std::vector<NamedItem> out;
    const auto base = path.parent_path();
    detail::for_each_record(path, [&](const nlohmann::json& j, std::size_t lineno) {
        std::string id = j.contains("id") ? j.at("id").get<std::string>() : std::to_string(lineno);
        out.push_back({std::move(id), item_from_json(j, base)});
    });
    return out;
}

inline void write_item_manifest(const std::filesystem::path& path, const std::vector<NamedItem>& items) {
    const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
    std::string out;
    for (const auto& it : items) {
        nlohmann::json j = item_to_json(it.item, dir, path.stem().string() + "." + it.id);
        j["id"] = it.id;
        out += detail::dump_record(j) + "\n";
    }
    io::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Embedding dumps

enum class DumpFormat { binary, text };

inline DumpFormat dump_format_from_string(const std::string& s) {
    if (s == "binary") return DumpFormat::binary;
    if (s == "text") return DumpFormat::text;
    throw ConfigError("unknown format '" + s + "'");
}

// Binary: per item u32 id length, id bytes, u32 dim, dim float32 values.
// Text: one vector per line, space-separated.
inline std::string encode_embeddings(const std::vector<std::string>& ids, const std::vector<Tensor>& vecs,
                                     DumpFormat fmt) {
    if (ids.size() != vecs.size()) throw DimensionError("id count does not match vector count");
    std::string out;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        if (fmt == DumpFormat::binary) {
            io::put_le<std::uint32_t>(out, std::uint32_t(ids[i].size()));
            out += ids[i];
            io::put_le<std::uint32_t>(out, std::uint32_t(vecs[i].size()));
            for (double v : vecs[i].values()) io::put_f32(out, v);
        } else {
            char buf[32];
            for (std::size_t k = 0; k < vecs[i].size(); ++k) {
                std::snprintf(buf, sizeof buf, "%s%.9g", k ? " " : "", double(float(vecs[i][k])));
                out += buf;
            }
            out += "\n";
        }
    }
    return out;
}

inline std::vector<std::pair<std::string, Tensor>> decode_embeddings(const std::string& buf) {
    std::vector<std::pair<std::string, Tensor>> out;
    io::Reader r(buf, "embedding dump");
    while (r.pos() < buf.size()) {
        std::string id = r.bytes(r.le<std::uint32_t>());
        const auto dim = r.le<std::uint32_t>();
        if (dim == 0) r.fail("zero-dimension vector");
        std::vector<double> v(dim);
        for (auto& x : v) x = r.f32();
        out.emplace_back(std::move(id), Tensor::vec(std::move(v)));
    }
    return out;
}

} // namespace gelato
