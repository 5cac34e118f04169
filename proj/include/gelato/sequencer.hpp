#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gelato/bundle.hpp"

namespace gelato {

using TokenId = std::int32_t;

namespace token {
inline constexpr TokenId kPad = 256;
inline constexpr TokenId kVisionStart = 257;
inline constexpr TokenId kVisionEnd = 258;
inline constexpr TokenId kAudioStart = 259;
inline constexpr TokenId kAudioEnd = 260;
// Shared by image and video slots; frame provenance lives in the slot map.
inline constexpr TokenId kVisualPad = 261;
inline constexpr TokenId kAudioPad = 262;
} // namespace token

struct InputItem {
    enum class Kind { text, image, audio, video, mixed };

    Kind kind = Kind::text;
    std::string text;
    Tensor image;                       // [H, W, C]
    Tensor samples;                     // [T]
    std::vector<Tensor> frames;         // video frames, each [H, W, C]
    std::optional<Tensor> video_audio;  // audio track of a video
    std::vector<InputItem> children;    // mixed

    static InputItem make_text(std::string s) {
        InputItem it;
        it.kind = Kind::text;
        it.text = std::move(s);
        return it;
    }
    static InputItem make_image(Tensor image) {
        InputItem it;
        it.kind = Kind::image;
        it.image = std::move(image);
        return it;
    }
    static InputItem make_audio(Tensor samples) {
        InputItem it;
        it.kind = Kind::audio;
        it.samples = std::move(samples);
        return it;
    }
    static InputItem make_video(std::vector<Tensor> frames, std::optional<Tensor> audio = std::nullopt) {
        InputItem it;
        it.kind = Kind::video;
        it.frames = std::move(frames);
        it.video_audio = std::move(audio);
        return it;
    }
    static InputItem make_mixed(std::vector<InputItem> children) {
        InputItem it;
        it.kind = Kind::mixed;
        it.children = std::move(children);
        return it;
    }
};

inline std::string to_string(InputItem::Kind k) {
    switch (k) {
    case InputItem::Kind::text: return "text";
    case InputItem::Kind::image: return "image";
    case InputItem::Kind::audio: return "audio";
    case InputItem::Kind::video: return "video";
    case InputItem::Kind::mixed: return "mixed";
    }
    return "?";
}

// Where the features for a slot run come from. Indices count media of that
// kind in document order.
struct SlotSource {
    enum class Kind { image, video_frame, audio };
    Kind kind = Kind::image;
    std::size_t index = 0; // image, video or audio index
    std::size_t frame = 0; // frame within the video
    friend bool operator==(const SlotSource&, const SlotSource&) = default;
};

struct SlotRange {
    std::size_t begin = 0;
    std::size_t count = 0;
    SlotSource source;
    friend bool operator==(const SlotRange&, const SlotRange&) = default;
};

struct TokenSequence {
    std::vector<TokenId> ids;
    std::vector<SlotRange> slots;
};

// Media tensors referenced by a TokenSequence's slot map.
struct MediaSet {
    std::vector<const Tensor*> images;
    std::vector<const std::vector<Tensor>*> videos;
    std::vector<const Tensor*> audios;
};

// ---------------------------------------------------------------------------
// Byte-level text tokens

inline std::vector<TokenId> tokenize_text(const std::string& s) {
    std::vector<TokenId> ids;
    ids.reserve(s.size());
    for (unsigned char c : s) ids.push_back(TokenId(c));
    return ids;
}

inline std::string decode_text(const std::vector<TokenId>& ids) {
    std::string s;
    s.reserve(ids.size());
    for (TokenId id : ids) {
        if (id < 0 || id > 255) throw StructureError("token id " + std::to_string(id) + " is not a byte");
        s.push_back(char(static_cast<unsigned char>(id)));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::size_t visual_slot_count(const ModelConfig& cfg, const Tensor& image) {
    if (image.rank() != 3 || image.shape()[2] != cfg.vision.channels) {
        throw DimensionError("image must be [H, W, " + std::to_string(cfg.vision.channels) + "], got " +
                             shape_str(image.shape()));
    }
    return patch_grid(cfg.vision, image.shape()[0], image.shape()[1]).count() / 4;
}

inline std::size_t audio_slot_count(const ModelConfig& cfg, const Tensor& samples) {
    if (samples.rank() != 1) throw DimensionError("audio must be 1-D, got " + shape_str(samples.shape()));
    return audio_token_count(cfg.audio, samples.size());
}

namespace detail {

struct Serializer {
    const ModelConfig& cfg;
    TokenSequence seq;
    MediaSet media;

    void run(TokenId open, TokenId pad, TokenId close, std::size_t n, SlotSource src) {
        seq.ids.push_back(open);
        seq.slots.push_back({seq.ids.size(), n, src});
        seq.ids.insert(seq.ids.end(), n, pad);
        seq.ids.push_back(close);
    }

    void audio(const Tensor& samples) {
        const std::size_t k = audio_slot_count(cfg, samples);
        run(token::kAudioStart, token::kAudioPad, token::kAudioEnd, k,
            {SlotSource::Kind::audio, media.audios.size(), 0});
        media.audios.push_back(&samples);
    }

    void item(const InputItem& it, bool nested) {
        using K = InputItem::Kind;
        switch (it.kind) {
        case K::text: {
            auto ids = tokenize_text(it.text);
            seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
            break;
        }
        case K::image: {
            const std::size_t n = visual_slot_count(cfg, it.image);
            run(token::kVisionStart, token::kVisualPad, token::kVisionEnd, n,
                {SlotSource::Kind::image, media.images.size(), 0});
            media.images.push_back(&it.image);
            break;
        }
        case K::audio: audio(it.samples); break;
        case K::video: {
            if (it.frames.empty()) throw StructureError("video needs at least one frame");
            if (it.video_audio) audio(*it.video_audio);
            const std::size_t vi = media.videos.size();
            for (std::size_t f = 0; f < it.frames.size(); ++f) {
                const std::size_t s = visual_slot_count(cfg, it.frames[f]);
                run(token::kVisionStart, token::kVisualPad, token::kVisionEnd, s,
                    {SlotSource::Kind::video_frame, vi, f});
            }
            media.videos.push_back(&it.frames);
            break;
        }
        case K::mixed: {
            if (nested) throw StructureError("mixed items cannot nest");
            if (it.children.empty()) throw StructureError("mixed item has no children");
            for (const auto& c : it.children) item(c, true);
            break;
        }
        }
    }
};

} // namespace detail

// Text -> bytes; image -> vision_start, N pads, vision_end (N = P/4); audio ->
// audio_start, K pads, audio_end; video -> [audio segment] then one visual
// segment per frame; mixed -> children in document order.
inline TokenSequence serialize(const InputItem& item, const ModelConfig& cfg) {
    detail::Serializer s{cfg, {}, {}};
    s.item(item, false);
    return std::move(s.seq);
}

inline MediaSet collect_media(const InputItem& item, const ModelConfig& cfg) {
    detail::Serializer s{cfg, {}, {}};
    s.item(item, false);
    return std::move(s.media);
}

// ---------------------------------------------------------------------------
// Parsing back into segments

struct Segment {
    enum class Kind { text, image, audio, video_frame };
    Kind kind = Kind::text;
    std::string text;
    std::size_t slots = 0;
    SlotSource source;
    friend bool operator==(const Segment&, const Segment&) = default;
};

// Recovers the segment structure and checks that every placeholder run sits
// between its matching delimiters and agrees with the slot map.
inline std::vector<Segment> parse_sequence(const TokenSequence& seq) {
    std::vector<Segment> out;
    std::size_t pos = 0, slot_i = 0;
    const auto& ids = seq.ids;
    while (pos < ids.size()) {
        const TokenId id = ids[pos];
        if (id >= 0 && id <= 255) {
            if (out.empty() || out.back().kind != Segment::Kind::text) out.push_back({Segment::Kind::text, "", 0, {}});
            out.back().text.push_back(char(static_cast<unsigned char>(id)));
            ++pos;
            continue;
        }
        TokenId pad, close;
        if (id == token::kVisionStart) {
            pad = token::kVisualPad;
            close = token::kVisionEnd;
        } else if (id == token::kAudioStart) {
            pad = token::kAudioPad;
            close = token::kAudioEnd;
        } else {
            throw StructureError("unexpected token " + std::to_string(id) + " at position " + std::to_string(pos));
        }
        std::size_t end = pos + 1;
        while (end < ids.size() && ids[end] == pad) ++end;
        if (end >= ids.size() || ids[end] != close) {
            throw StructureError("unterminated placeholder run at position " + std::to_string(pos));
        }
        const std::size_t n = end - pos - 1;
        if (n == 0) throw StructureError("empty placeholder run at position " + std::to_string(pos));
        if (slot_i >= seq.slots.size() || seq.slots[slot_i].begin != pos + 1 || seq.slots[slot_i].count != n) {
            throw StructureError("slot map disagrees with the run at position " + std::to_string(pos));
        }
        const SlotSource src = seq.slots[slot_i++].source;
        const bool audio = id == token::kAudioStart;
        if (audio != (src.kind == SlotSource::Kind::audio)) throw StructureError("slot source kind mismatch");
        Segment seg;
        seg.kind = audio ? Segment::Kind::audio
                         : (src.kind == SlotSource::Kind::image ? Segment::Kind::image : Segment::Kind::video_frame);
        seg.slots = n;
        seg.source = src;
        out.push_back(seg);
        pos = end + 1;
    }
    if (slot_i != seq.slots.size()) throw StructureError("slot map has entries beyond the sequence");
    return out;
}

// The segment structure an item should serialize to, derived directly from
// the item tree.
inline std::vector<Segment> expected_segments(const InputItem& item, const ModelConfig& cfg) {
    std::vector<Segment> out;
    std::size_t images = 0, videos = 0, audios = 0;
    auto push_text = [&](const std::string& s) {
        if (s.empty()) return;
        if (out.empty() || out.back().kind != Segment::Kind::text) out.push_back({Segment::Kind::text, "", 0, {}});
        out.back().text += s;
    };
    auto visit = [&](const InputItem& it, auto& self) -> void {
        using K = InputItem::Kind;
        switch (it.kind) {
        case K::text: push_text(it.text); break;
        case K::image:
            out.push_back({Segment::Kind::image, "", visual_slot_count(cfg, it.image),
                           {SlotSource::Kind::image, images++, 0}});
            break;
        case K::audio:
            out.push_back({Segment::Kind::audio, "", audio_slot_count(cfg, it.samples),
                           {SlotSource::Kind::audio, audios++, 0}});
            break;
        case K::video: {
            if (it.video_audio) {
                out.push_back({Segment::Kind::audio, "", audio_slot_count(cfg, *it.video_audio),
                               {SlotSource::Kind::audio, audios++, 0}});
            }
            const std::size_t v = videos++;
            for (std::size_t f = 0; f < it.frames.size(); ++f) {
                out.push_back({Segment::Kind::video_frame, "", visual_slot_count(cfg, it.frames[f]),
                               {SlotSource::Kind::video_frame, v, f}});
            }
            break;
        }
        case K::mixed:
            for (const auto& c : it.children) self(c, self);
            break;
        }
    };
    visit(item, visit);
    return out;
}

// ---------------------------------------------------------------------------
// Materialization

inline Var delimiter_row(Tape& t, const ModelBundle& b, TokenId id) {
    const char* name = id == token::kVisionStart ? names::kVisionStart
                       : id == token::kVisionEnd ? names::kVisionEnd
                       : id == token::kAudioStart ? names::kAudioStart
                                                  : names::kAudioEnd;
    if (!b.delimiters.params.contains(name)) {
        throw ModalityUnavailableError(std::string("delimiter '") + name + "' is not loaded under modality '" +
                                       to_string(b.modality) + "'");
    }
    const std::size_t d = b.config.text.d_text;
    return reshape(t, t.param(b.delimiters.params, name), {1, d});
}

inline Var project_slot_source(Tape& t, const ModelBundle& b, const SlotSource& src, const MediaSet& media) {
    auto vision_features = [&](const Tensor& image) {
        if (!b.vision || !b.vision_proj) {
            throw ModalityUnavailableError("vision tower is not loaded under modality '" + to_string(b.modality) + "'");
        }
        Grid grid;
        Var patches = encode_image(t, *b.vision, image, grid);
        return project_vision(t, *b.vision_proj, patches, grid);
    };
    switch (src.kind) {
    case SlotSource::Kind::image:
        if (src.index >= media.images.size()) throw SlotMismatchError("slot map references a missing image");
        return vision_features(*media.images[src.index]);
    case SlotSource::Kind::video_frame:
        if (src.index >= media.videos.size() || src.frame >= media.videos[src.index]->size()) {
            throw SlotMismatchError("slot map references a missing video frame");
        }
        return vision_features((*media.videos[src.index])[src.frame]);
    case SlotSource::Kind::audio:
        if (src.index >= media.audios.size()) throw SlotMismatchError("slot map references a missing audio clip");
        if (!b.audio || !b.audio_proj) {
            throw ModalityUnavailableError("audio tower is not loaded under modality '" + to_string(b.modality) + "'");
        }
        return project_audio(t, *b.audio_proj, encode_audio(t, *b.audio, *media.audios[src.index]));
    }
    throw StructureError("unknown slot source");
}

// Input states [T, d_text]: byte tokens read the embedding table, delimiters
// read their learned rows, and each placeholder run is replaced by the
// projected features of its media, row for row. Placeholder ids are never
// looked up.
inline Var materialize(Tape& t, const TokenSequence& seq, const ModelBundle& b, const MediaSet& media) {
    if (seq.ids.empty()) throw EmptyInputError("cannot materialize an empty token sequence");
    std::vector<Var> parts;
    std::vector<std::size_t> text_run;
    Var table = t.param(b.text.params, names::kTextEmbed);
    auto flush_text = [&] {
        if (text_run.empty()) return;
        parts.push_back(gather_rows(t, table, std::move(text_run)));
        text_run.clear();
    };
    std::size_t pos = 0, slot_i = 0;
    while (pos < seq.ids.size()) {
        if (slot_i < seq.slots.size() && seq.slots[slot_i].begin == pos) {
            flush_text();
            const auto& run = seq.slots[slot_i++];
            Var feats = project_slot_source(t, b, run.source, media);
            const std::size_t produced = t.value(feats).rows();
            if (produced != run.count) {
                throw SlotMismatchError("slot run at position " + std::to_string(run.begin) + " expects " +
                                        std::to_string(run.count) + " features, projection produced " +
                                        std::to_string(produced));
            }
            if (run.begin + run.count > seq.ids.size()) throw SlotMismatchError("slot run extends past the sequence");
            parts.push_back(feats);
            pos += run.count;
            continue;
        }
        const TokenId id = seq.ids[pos];
        if (id >= 0 && id <= token::kPad) {
            text_run.push_back(std::size_t(id));
        } else if (id >= token::kVisionStart && id <= token::kAudioEnd) {
            flush_text();
            parts.push_back(delimiter_row(t, b, id));
        } else if (id == token::kVisualPad || id == token::kAudioPad) {
            throw SlotMismatchError("placeholder at position " + std::to_string(pos) + " is not covered by the slot map");
        } else {
            throw StructureError("token id " + std::to_string(id) + " is outside the vocabulary");
        }
        ++pos;
    }
    flush_text();
    if (slot_i != seq.slots.size()) throw SlotMismatchError("slot map has runs that were never reached");
    return parts.size() == 1 ? parts[0] : concat_rows(t, parts);
}

} // namespace gelato
