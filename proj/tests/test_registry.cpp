#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "gelato/embedder.hpp"
#include "gelato/registry.hpp"
#include "gelato/toy_data.hpp"

using namespace gelato;
namespace fs = std::filesystem;

namespace {

const ModelConfig kCfg = ModelConfig::toy();

Tensor as_stored(const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(float(out[i]));
    return out;
}

std::set<std::string> resident(const ModelBundle& b) {
    std::set<std::string> out;
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, _] : *s) out.insert(n);
    return out;
}

bool starts(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

// Manifests are UTF-8 JSON; fold random bytes into printable ASCII.
void asciify(InputItem& it) {
    for (auto& c : it.text) c = char(32 + (static_cast<unsigned char>(c) % 95));
    for (auto& child : it.children) asciify(child);
}

class Registry : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir = new fs::path(fs::temp_directory_path() / ("gelato_registry_" + std::to_string(::getpid())));
        fs::create_directories(*dir);
        pkg = new ModelPackage(build_package(kCfg, 41));
        CheckpointManifest m;
        m.k_set = kToyPrefixes;
        m.creation_step = 12;
        save_checkpoint(*pkg, m, *dir / "model.gela");
    }
    static void TearDownTestSuite() {
        fs::remove_all(*dir);
        delete dir;
        delete pkg;
    }
    static fs::path ckpt() { return *dir / "model.gela"; }
    static fs::path* dir;
    static ModelPackage* pkg;
};
fs::path* Registry::dir = nullptr;
ModelPackage* Registry::pkg = nullptr;

} // namespace

TEST_F(Registry, RoundTripPreservesStoredValues) {
    auto [loaded, manifest] = load_package(ckpt());
    for (const auto& [n, e] : pkg->shared.text.params) EXPECT_EQ(loaded.shared.text.params.get(n), as_stored(*e.value)) << n;
    for (const auto& [n, e] : pkg->shared.vision.params)
        EXPECT_EQ(loaded.shared.vision.params.get(n), as_stored(*e.value)) << n;
    for (const auto& [n, e] : pkg->shared.audio.params)
        EXPECT_EQ(loaded.shared.audio.params.get(n), as_stored(*e.value)) << n;
    for (const auto& [t, w] : pkg->variants) {
        const auto& lw = loaded.variants.at(t);
        for (const auto& [n, e] : w.lora.params) EXPECT_EQ(lw.lora.params.get(n), as_stored(*e.value)) << n;
        for (const auto& [n, e] : w.fc_vision_2) EXPECT_EQ(lw.fc_vision_2.get(n), as_stored(*e.value)) << n;
        for (const auto& [n, e] : w.fc_audio) EXPECT_EQ(lw.fc_audio.get(n), as_stored(*e.value)) << n;
        for (const auto& [n, e] : w.delimiters.params)
            EXPECT_EQ(lw.delimiters.params.get(n), as_stored(*e.value)) << n;
    }
    EXPECT_EQ(manifest.seed, 41u);
    EXPECT_EQ(manifest.creation_step, 12u);
    EXPECT_EQ(manifest.k_set, kToyPrefixes);
    EXPECT_EQ(manifest.variants.size(), 4u);
}

TEST_F(Registry, SaveLoadSaveByteIdentical) {
    auto [loaded, manifest] = load_package(ckpt());
    save_checkpoint(loaded, manifest, *dir / "again.gela");
    EXPECT_EQ(io::read_file(*dir / "again.gela"), io::read_file(ckpt()));
}

TEST_F(Registry, PayloadAligned) {
    CheckpointFile f(ckpt());
    for (const auto& [n, e] : f.index()) EXPECT_EQ(e.offset % kPayloadAlign, 0u) << n;
    EXPECT_EQ(io::read_file(ckpt()).substr(0, 4), "GELA");
}

TEST_F(Registry, ManifestVariantPreserved) {
    ModelPackage one = build_package(kCfg, 41, {TaskVariant::clustering});
    save_checkpoint(one, {}, *dir / "one.gela");
    CheckpointFile f(*dir / "one.gela");
    EXPECT_EQ(f.manifest().variants, std::vector<TaskVariant>{TaskVariant::clustering});
    EXPECT_TRUE(f.has_variant(TaskVariant::clustering));
    EXPECT_FALSE(f.has_variant(TaskVariant::retrieval));
    EXPECT_THROW(load(*dir / "one.gela", TaskVariant::retrieval, Modality::text), VariantNotFoundError);
}

TEST_F(Registry, CorruptFilesRejected) {
    const std::string bytes = io::read_file(ckpt());
    io::write_file(*dir / "trunc.gela", bytes.substr(0, bytes.size() - 100));
    EXPECT_THROW(CheckpointFile(*dir / "trunc.gela"), IntegrityError);
    io::write_file(*dir / "short.gela", bytes.substr(0, 7));
    EXPECT_THROW(CheckpointFile(*dir / "short.gela"), IntegrityError);
    std::string magic = bytes;
    magic[0] = 'X';
    io::write_file(*dir / "magic.gela", magic);
    EXPECT_THROW(CheckpointFile(*dir / "magic.gela"), IntegrityError);
    std::string version = bytes;
    version[4] = char(9);
    io::write_file(*dir / "version.gela", version);
    EXPECT_THROW(CheckpointFile(*dir / "version.gela"), IntegrityError);
    EXPECT_THROW(CheckpointFile(*dir / "absent.gela"), IoError);
}

TEST_F(Registry, ShapeTablesMatchBuiltPackage) {
    const auto shared = shared_shapes(kCfg);
    std::map<std::string, Shape> built;
    for (const ParamSet* s : {&pkg->shared.text.params, &pkg->shared.vision.params, &pkg->shared.audio.params,
                              &pkg->shared.vision_merger})
        for (const auto& [n, e] : *s) built[n] = e.value->shape();
    EXPECT_EQ(built, shared);
    built.clear();
    const auto& w = pkg->variants.at(TaskVariant::retrieval);
    for (const ParamSet* s : {&w.lora.params, &w.fc_vision_2, &w.fc_audio, &w.delimiters.params})
        for (const auto& [n, e] : *s) built[n] = e.value->shape();
    EXPECT_EQ(built, task_shapes(kCfg));
}

TEST_F(Registry, ResidentSetsForEveryLoad) {
    const auto shared = shared_shapes(kCfg);
    const auto task = task_shapes(kCfg);
    for (auto t : kAllTasks)
        for (auto m : kAllModalities) {
            std::set<std::string> expected;
            for (const auto& [n, _] : shared) {
                const bool vis = starts(n, "vision.") || starts(n, "vision_proj.");
                const bool aud = starts(n, "audio.");
                if ((!vis && !aud) || (vis && has_vision(m)) || (aud && has_audio(m))) expected.insert(n);
            }
            for (const auto& [n, _] : task) {
                const bool vis = starts(n, "fc_vision_2.") || starts(n, "delim.vision_");
                const bool aud = starts(n, "fc_audio.") || starts(n, "delim.audio_");
                if ((!vis && !aud) || (vis && has_vision(m)) || (aud && has_audio(m))) expected.insert(n);
            }
            const ModelBundle b = load(ckpt(), t, m);
            EXPECT_EQ(resident(b), expected) << to_string(t) << "/" << to_string(m);
            // Task tensors come from the requested variant.
            const auto& w = pkg->variants.at(t);
            for (const auto& n : b.lora.params.names()) EXPECT_EQ(b.lora.params.get(n), as_stored(w.lora.params.get(n)));
            if (b.audio_proj) {
                EXPECT_EQ(b.audio_proj->params.get(names::kFcAudioW), as_stored(w.fc_audio.get(names::kFcAudioW)));
            }
        }
}

TEST_F(Registry, TextLoadHasNoMediaTensors) {
    const auto names = resident(load(ckpt(), TaskVariant::retrieval, Modality::text));
    for (const auto& n : names) {
        EXPECT_FALSE(starts(n, "vision") || starts(n, "audio") || starts(n, "fc_") || starts(n, "delim.")) << n;
    }
}

TEST_F(Registry, VisionLoadOmitsAudio) {
    const auto b = load(ckpt(), TaskVariant::retrieval, Modality::vision);
    for (const auto& n : resident(b)) EXPECT_FALSE(starts(n, "fc_audio") || starts(n, "audio.")) << n;
    EXPECT_THROW(embed(InputItem::make_audio(gaussian_tensor({40}, 1.0, 1)), b), ModalityUnavailableError);
    EXPECT_NO_THROW(embed(InputItem::make_image(gaussian_tensor({8, 8, 3}, 1.0, 1)), b));
}

TEST_F(Registry, TextIdentityAcrossLoads) {
    std::mt19937_64 rng(8);
    for (auto t : kAllTasks) {
        const auto ref = load(ckpt(), t, Modality::text);
        std::vector<ModelBundle> others;
        for (auto m : {Modality::vision, Modality::audio, Modality::omni}) others.push_back(load(ckpt(), t, m));
        for (int i = 0; i < 5; ++i) {
            std::string s(1 + rng() % 16, ' ');
            for (auto& c : s) c = char(rng() % 256);
            const Tensor e = embed(InputItem::make_text(s), ref).full;
            for (const auto& o : others) EXPECT_EQ(embed(InputItem::make_text(s), o).full, e);
        }
    }
}

TEST_F(Registry, SwitchTaskIsReversible) {
    const auto a = load(ckpt(), TaskVariant::retrieval, Modality::omni);
    const auto img = InputItem::make_image(gaussian_tensor({8, 8, 3}, 1.0, 4));
    const auto text = InputItem::make_text("switch");
    const auto b = switch_task(a, TaskVariant::classification);
    const auto back = switch_task(b, TaskVariant::retrieval);
    EXPECT_EQ(embed(img, back).full, embed(img, a).full);
    EXPECT_EQ(embed(text, back).full, embed(text, a).full);
    EXPECT_NE(embed(img, b).full, embed(img, a).full);
    EXPECT_EQ(b.task, TaskVariant::classification);
}

TEST_F(Registry, SwitchTaskMatchesFreshLoad) {
    const auto switched = switch_task(load(ckpt(), TaskVariant::retrieval, Modality::audio), TaskVariant::text_matching);
    const auto fresh = load(ckpt(), TaskVariant::text_matching, Modality::audio);
    EXPECT_EQ(resident(switched), resident(fresh));
    const auto clip = InputItem::make_audio(gaussian_tensor({40}, 1.0, 2));
    EXPECT_EQ(embed(clip, switched).full, embed(clip, fresh).full);
}

TEST_F(Registry, SwitchTaskSharesTowerStorage) {
    const auto a = load(ckpt(), TaskVariant::retrieval, Modality::omni);
    const auto b = switch_task(a, TaskVariant::clustering);
    for (const auto& n : a.text.params.names()) EXPECT_EQ(a.text.params.storage(n), b.text.params.storage(n)) << n;
    for (const auto& n : a.vision->params.names())
        EXPECT_EQ(a.vision->params.storage(n), b.vision->params.storage(n)) << n;
    for (const auto& n : a.audio->params.names()) EXPECT_EQ(a.audio->params.storage(n), b.audio->params.storage(n)) << n;
    EXPECT_EQ(a.vision_proj->params.storage(names::kFc1W), b.vision_proj->params.storage(names::kFc1W));
    EXPECT_NE(a.lora.params.storage(a.lora.params.names()[0]), b.lora.params.storage(b.lora.params.names()[0]));
}

TEST_F(Registry, SwitchTaskMissingVariant) {
    ModelPackage one = build_package(kCfg, 41, {TaskVariant::clustering});
    save_checkpoint(one, {}, *dir / "single.gela");
    const auto b = load(*dir / "single.gela", TaskVariant::clustering, Modality::text);
    EXPECT_THROW(switch_task(b, TaskVariant::retrieval), VariantNotFoundError);
    EXPECT_THROW(switch_task(one, b, TaskVariant::retrieval), VariantNotFoundError);
}

TEST_F(Registry, VariantsDifferInProjectors) {
    const auto img = InputItem::make_image(gaussian_tensor({8, 8, 3}, 1.0, 6));
    std::set<std::string> seen;
    for (auto t : kAllTasks) {
        const auto b = assemble_bundle(*pkg, t, Modality::vision);
        seen.insert(tensor_sha256(embed(img, b).full));
    }
    EXPECT_EQ(seen.size(), 4u);
}

TEST_F(Registry, LoadedTrainableFlags) {
    const auto b = load(ckpt(), TaskVariant::retrieval, Modality::omni);
    for (const ParamSet* s : b.param_sets())
        for (const auto& [n, e] : *s) EXPECT_EQ(e.trainable, default_trainable(n, kCfg.profile)) << n;
}

TEST(Mtf, RoundTrip) {
    const Tensor t = as_stored(gaussian_tensor({4, 6, 3}, 1.0, 2));
    const std::string bytes = encode_mtf(t);
    EXPECT_EQ(bytes.substr(0, 4), "MTF1");
    EXPECT_EQ(bytes.size(), 4u + 1u + 3u * 4u + 72u * 4u);
    EXPECT_EQ(decode_mtf(bytes, "x"), t);
    EXPECT_THROW(decode_mtf(bytes.substr(0, bytes.size() - 1), "x"), IntegrityError);
    EXPECT_THROW(decode_mtf(bytes + "z", "x"), IntegrityError);
    EXPECT_THROW(decode_mtf("MTF2" + bytes.substr(4), "x"), IntegrityError);
}

TEST(Manifests, PairAndItemRoundTrip) {
    const fs::path dir = fs::temp_directory_path() / ("gelato_manifest_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::mt19937_64 rng(12);
    PairDataset ds;
    ds.name = "pairs";
    std::vector<NamedItem> items;
    for (int i = 0; i < 20; ++i) {
        InputItem l = random_item(kCfg, rng), r = random_item(kCfg, rng);
        asciify(l);
        asciify(r);
        ds.pairs.emplace_back(l, r);
        items.push_back({"item-" + std::to_string(i), l});
    }
    write_pair_manifest(dir / "pairs.jsonl", ds);
    write_item_manifest(dir / "items.jsonl", items);
    const auto back = read_pair_manifest(dir / "pairs.jsonl");
    const auto named = read_item_manifest(dir / "items.jsonl");
    ASSERT_EQ(back.pairs.size(), 20u);
    ASSERT_EQ(named.size(), 20u);
    EXPECT_EQ(back.name, "pairs");
    for (std::size_t i = 0; i < 20; ++i) {
        // Media passes through float32, so compare serialized token streams
        // and stored values.
        EXPECT_EQ(serialize(back.pairs[i].first, kCfg).ids, serialize(ds.pairs[i].first, kCfg).ids);
        EXPECT_EQ(serialize(back.pairs[i].second, kCfg).ids, serialize(ds.pairs[i].second, kCfg).ids);
        EXPECT_EQ(named[i].id, items[i].id);
        const auto ma = collect_media(named[i].item, kCfg), mb = collect_media(items[i].item, kCfg);
        ASSERT_EQ(ma.images.size(), mb.images.size());
        for (std::size_t k = 0; k < ma.images.size(); ++k) EXPECT_EQ(*ma.images[k], as_stored(*mb.images[k]));
        ASSERT_EQ(ma.audios.size(), mb.audios.size());
        for (std::size_t k = 0; k < ma.audios.size(); ++k) EXPECT_EQ(*ma.audios[k], as_stored(*mb.audios[k]));
    }
    EXPECT_THROW(write_item_manifest(dir / "raw.jsonl", {{"x", InputItem::make_text("\xff\xfe")}}), IoError);
    io::write_file(dir / "bad.jsonl", "{\"text\": \"ok\"}\n{\"image\": \"missing.mtf\"}\n");
    try {
        read_item_manifest(dir / "bad.jsonl");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("bad.jsonl:2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("missing.mtf"), std::string::npos) << msg;
    }
    fs::remove_all(dir);
}

TEST(EmbeddingDump, BinaryRoundTripAndTextLayout) {
    const std::vector<std::string> ids{"a", "query-2"};
    const std::vector<Tensor> vecs{Tensor::vec({0.5, -0.25, 1.0}), Tensor::vec({0.1, 0.2, 0.3})};
    const std::string bin = encode_embeddings(ids, vecs, DumpFormat::binary);
    EXPECT_EQ(bin.size(), (4u + 1u + 4u + 12u) + (4u + 7u + 4u + 12u));
    const auto back = decode_embeddings(bin);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].first, "a");
    EXPECT_EQ(back[0].second, vecs[0]);
    EXPECT_EQ(back[1].second, as_stored(vecs[1]));
    EXPECT_EQ(encode_embeddings({"a"}, {vecs[0]}, DumpFormat::text), "0.5 -0.25 1\n");
    EXPECT_THROW(decode_embeddings(bin.substr(0, bin.size() - 2)), IntegrityError);
    EXPECT_THROW(dump_format_from_string("csv"), ConfigError);
}
