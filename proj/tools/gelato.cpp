// gelato: train, embed, eval, sweep, ablate, bench, inspect, toy-data.
// Exit codes: 0 ok, 2 usage, 3 data/format, 4 numeric.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gelato/evalkit.hpp"
#include "gelato/toy_data.hpp"

using namespace gelato;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, sep))
        if (!trim(part).empty()) out.push_back(trim(part));
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T x{};
    if (!(in >> x) || !(in >> std::ws).eof()) throw UsageError("config key '" + key + "': bad value '" + v + "'");
    return x;
}

// ---------------------------------------------------------------------------
// Run configuration (key = value lines, '#' comments)

struct DataSource {
    std::string path;
    double weight = 1.0;
};

struct RunConfig {
    std::string model = "toy";
    Profile profile = Profile::small;
    TaskVariant task = TaskVariant::retrieval;
    Modality modality = Modality::omni;
    std::vector<DataSource> data;
    std::string init; // optional checkpoint to start from
    fs::path base;    // relative data/init paths resolve against the config's directory
    TrainConfig train;
    std::string stage2_scope;
    double stage2_lr = 1e-5;
    std::size_t stage2_steps = 0;

    fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : base / p; }

    ModelConfig model_config() const {
        if (model != "toy") throw UsageError("unknown model '" + model + "' (available: toy)");
        ModelConfig c = ModelConfig::toy();
        c.profile = profile;
        return c;
    }

    // Canonical text; the run directory is named by its hash (seed excluded).
    std::string canonical(bool with_seed) const {
        std::ostringstream o;
        o.precision(17);
        const auto& t = train;
        o << "model=" << model << "\nprofile=" << to_string(profile) << "\ntask=" << to_string(task)
          << "\nmodality=" << to_string(modality) << "\n";
        for (const auto& d : data) o << "data=" << d.path << "," << d.weight << "\n";
        if (!init.empty()) o << "init=" << init << "\n";
        o << "lr_max=" << t.lr_max << "\nwarmup_steps=" << t.warmup_steps << "\nbeta1=" << t.beta1
          << "\nbeta2=" << t.beta2 << "\nweight_decay=" << t.weight_decay << "\neps=" << t.eps
          << "\nmax_grad_norm=" << t.max_grad_norm << "\nbatch_size=" << t.batch_size << "\nsteps=" << t.steps
          << "\ntau=" << t.tau << "\nk_set=";
        for (std::size_t i = 0; i < t.k_set.size(); ++i) o << (i ? "," : "") << t.k_set[i];
        o << "\nscope=" << to_string(t.scope) << "\ncheck_interval=" << t.check_interval << "\n";
        if (!stage2_scope.empty())
            o << "stage2_scope=" << stage2_scope << "\nstage2_lr=" << stage2_lr << "\nstage2_steps=" << stage2_steps
              << "\n";
        if (with_seed) o << "seed=" << t.seed << "\n";
        return o.str();
    }
};

RunConfig read_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    RunConfig c;
    c.base = fs::path(path).parent_path();
    c.train.steps = 1000;
    c.train.batch_size = 32;
    c.train.warmup_steps = 50;
    c.train.lr_max = 1e-3;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        auto& t = c.train;
        try {
            if (key == "model") c.model = v;
            else if (key == "profile") c.profile = profile_from_string(v);
            else if (key == "task") c.task = task_from_string(v);
            else if (key == "modality") c.modality = modality_from_string(v);
            else if (key == "data") {
                const auto parts = split(v, ',');
                if (parts.empty() || parts.size() > 2) throw UsageError("data expects 'path' or 'path, weight'");
                c.data.push_back({parts[0], parts.size() == 2 ? parse_number<double>(key, parts[1]) : 1.0});
            } else if (key == "init") c.init = v;
            else if (key == "lr_max") t.lr_max = parse_number<double>(key, v);
            else if (key == "warmup_steps") t.warmup_steps = parse_number<std::size_t>(key, v);
            else if (key == "beta1") t.beta1 = parse_number<double>(key, v);
            else if (key == "beta2") t.beta2 = parse_number<double>(key, v);
            else if (key == "weight_decay") t.weight_decay = parse_number<double>(key, v);
            else if (key == "eps") t.eps = parse_number<double>(key, v);
            else if (key == "max_grad_norm") t.max_grad_norm = parse_number<double>(key, v);
            else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, v);
            else if (key == "steps") t.steps = parse_number<std::size_t>(key, v);
            else if (key == "tau") t.tau = parse_number<double>(key, v);
            else if (key == "k_set") {
                t.k_set.clear();
                for (const auto& k : split(v, ',')) t.k_set.push_back(parse_number<std::size_t>(key, k));
            } else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, v);
            else if (key == "scope") t.scope = scope_from_string(v);
            else if (key == "check_interval") t.check_interval = parse_number<std::size_t>(key, v);
            else if (key == "stage2_scope") c.stage2_scope = v;
            else if (key == "stage2_lr") c.stage2_lr = parse_number<double>(key, v);
            else if (key == "stage2_steps") c.stage2_steps = parse_number<std::size_t>(key, v);
            else throw UsageError("unknown config key '" + key + "'");
        } catch (const ConfigError& e) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const UsageError& e) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!c.stage2_scope.empty())
        c.train.stage2 = TrainConfig::Stage2{scope_from_string(c.stage2_scope), c.stage2_lr, c.stage2_steps};
    return c;
}

MixtureSpec load_mixture(const RunConfig& c) {
    if (c.data.empty()) throw UsageError("config names no data manifest");
    MixtureSpec mix;
    for (const auto& d : c.data) {
        const fs::path p = c.resolve(d.path);
        if (!fs::exists(p)) throw IoError("data manifest '" + p.string() + "' does not exist");
        mix.add(share(read_pair_manifest(p)), d.weight);
    }
    return mix;
}

fs::path make_run_dir(const RunConfig& c, const std::string& root, const char* kind) {
    const fs::path dir = fs::path(root) / (std::string(kind) + "-" + sha256_hex(c.canonical(false)).substr(0, 16) +
                                           "-seed" + std::to_string(c.train.seed));
    fs::create_directories(dir);
    io::write_file(dir / "config.txt", c.canonical(true));
    return dir;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Common {
    std::string config;
    std::string checkpoint;
    std::string task = "retrieval";
    std::string modality = "omni";
    std::string dim;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string format = "binary";
    std::string input;
};

int cmd_train(const Common& o) {
    RunConfig c = read_run_config(o.config);
    if (o.seed_set) c.train.seed = o.seed;
    const MixtureSpec mix = load_mixture(c);
    const fs::path dir = make_run_dir(c, o.out.empty() ? "runs" : o.out, "train");
    ModelPackage pkg;
    if (c.init.empty()) {
        pkg = build_package(c.model_config(), c.train.seed, {c.task});
    } else {
        pkg = load_package(c.resolve(c.init)).first;
        for (auto it = pkg.variants.begin(); it != pkg.variants.end();)
            it = it->first == c.task ? std::next(it) : pkg.variants.erase(it);
        if (pkg.variants.empty()) throw VariantNotFoundError("init checkpoint has no variant '" + to_string(c.task) + "'");
    }
    const ModelBundle init = assemble_bundle(pkg, c.task, c.modality);
    const TrainResult r = train(init, mix, c.train);
    store_bundle(pkg, r.bundle);
    CheckpointManifest m;
    m.k_set = c.train.k_set;
    m.tau = c.train.tau;
    m.scope = to_string(c.train.scope) + (c.train.stage2 ? " -> " + to_string(c.train.stage2->scope) : "");
    m.creation_step = c.train.steps + (c.train.stage2 ? c.train.stage2->steps : 0);
    save_checkpoint(pkg, m, dir / "checkpoint.gela");
    std::ofstream trace(dir / "trace.tsv");
    write_trace_tsv(trace, r.trace);
    std::cout << dir.string() << "\n";
    return 0;
}

std::size_t parse_dim(const std::string& s, std::size_t full) {
    if (s.empty() || s == "full") return full;
    return parse_number<std::size_t>("--dim", s);
}

int cmd_embed(const Common& o) {
    const ModelBundle b = load(o.checkpoint, task_from_string(o.task), modality_from_string(o.modality));
    const std::size_t k = parse_dim(o.dim, b.config.text.d_text);
    const DumpFormat fmt = dump_format_from_string(o.format);
    const auto items = read_item_manifest(o.input);
    std::vector<InputItem> xs;
    std::vector<std::string> ids;
    for (const auto& it : items) {
        xs.push_back(it.item);
        ids.push_back(it.id);
    }
    std::vector<Tensor> vecs;
    for (const auto& e : embed_batch(xs, b)) vecs.push_back(truncate(e, k));
    const std::string bytes = encode_embeddings(ids, vecs, fmt);
    if (o.out.empty() || o.out == "-") std::cout << bytes;
    else io::write_file(o.out, bytes);
    return 0;
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") std::cout << text;
    else io::write_file(path, text);
}

int cmd_eval(const Common& o) {
    const ModelBundle b = load(o.checkpoint, task_from_string(o.task), modality_from_string(o.modality));
    const std::size_t k = parse_dim(o.dim, b.config.text.d_text);
    const RetrievalTask task = read_retrieval_task(o.input);
    SweepReport rows;
    for (const auto& p : retrieval_eval(task, b, {k}))
        if (p.k == k) rows.push_back({o.modality, to_string(b.config.profile), task.name, p.k, p.ndcg10, p.recall1});
    std::ostringstream out;
    write_sweep_tsv(out, rows);
    emit(o.out, out.str());
    return 0;
}

int cmd_sweep(const Common& o, const std::vector<std::string>& modalities, const std::string& dims,
              const std::string& report) {
    if (report != "tsv" && report != "plot" && report != "both") throw UsageError("--report must be tsv, plot or both");
    const RetrievalTask task = read_retrieval_task(o.input);
    std::vector<std::size_t> ks;
    for (const auto& k : split(dims, ',')) ks.push_back(parse_number<std::size_t>("--dims", k));
    SweepReport rows;
    for (const auto& m : modalities.empty() ? std::vector<std::string>{o.modality} : modalities) {
        const ModelBundle b = load(o.checkpoint, task_from_string(o.task), modality_from_string(m));
        std::vector<std::size_t> dims = ks;
        if (dims.empty())
            for (auto k : kToyPrefixes)
                if (k <= b.config.text.d_text) dims.push_back(k);
        for (const auto& p : retrieval_eval(task, b, dims))
            rows.push_back({m, to_string(b.config.profile), task.name, p.k, p.ndcg10, p.recall1});
    }
    const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
    fs::create_directories(dir);
    if (report != "plot") {
        std::ostringstream s;
        write_sweep_tsv(s, rows);
        io::write_file(dir / "sweep.tsv", s.str());
    }
    if (report != "tsv") {
        std::ostringstream s;
        write_sweep_plot_data(s, rows);
        io::write_file(dir / "sweep_plot.tsv", s.str());
    }
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_ablate(const Common& o, const std::string& family) {
    if (family != "vision" && family != "audio") throw UsageError("--family must be vision or audio");
    RunConfig c = read_run_config(o.config);
    if (o.seed_set) c.train.seed = o.seed;
    const MixtureSpec mix = load_mixture(c);
    const RetrievalTask eval = read_retrieval_task(o.input);
    const fs::path dir = make_run_dir(c, o.out.empty() ? "runs" : o.out, family == "vision" ? "ablate-vision" : "ablate-audio");
    const ModelPackage pkg = build_package(c.model_config(), c.train.seed, {c.task});
    const ModelBundle init = assemble_bundle(pkg, c.task, family == "vision" ? Modality::vision : Modality::audio);
    const std::size_t stage2 = c.stage2_steps ? c.stage2_steps : c.train.steps / 2;
    const auto runs = family == "vision" ? vision_ablation_runs(c.train.steps, stage2, c.train.lr_max, c.stage2_lr)
                                         : audio_ablation_runs(c.train.steps, stage2, c.train.lr_max, c.stage2_lr);
    TrainConfig base = c.train;
    base.stage2.reset();
    const AblationReport rep = run_ablation_suite(init, runs, mix, base, eval);
    std::ostringstream report, plot;
    write_ablation_report(report, rep);
    write_ablation_plot_data(plot, rep);
    io::write_file(dir / "ablation.tsv", report.str());
    io::write_file(dir / "ablation_plot.tsv", plot.str());
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_bench(const Common& o, const std::vector<std::string>& scopes, std::size_t batch, std::size_t steps,
              const std::string& data) {
    const ModelBundle b = load(o.checkpoint, task_from_string(o.task), modality_from_string(o.modality));
    MixtureSpec mix;
    if (!data.empty()) {
        mix.add(share(read_pair_manifest(data)), 1.0);
    } else if (b.vision_proj && b.audio_proj) {
        mix.add(share(make_latent_pairs(b.config, ViewKind::image, ViewKind::audio, 1024, {})), 1.0);
    } else if (b.vision_proj || b.audio_proj) {
        mix.add(share(make_class_pairs(b.config, b.vision_proj ? ViewKind::image : ViewKind::audio, 1024, {})), 1.0);
    } else {
        throw UsageError("bench needs --data for a text-only modality");
    }
    std::vector<FreezeScope> fs_list;
    for (const auto& s : scopes.empty() ? std::vector<std::string>{"projector_only", "full"} : scopes)
        fs_list.push_back(scope_from_string(s));
    TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.seed = o.seed;
    cfg.lr_max = 1e-3;
    cfg.warmup_steps = 0;
    EfficiencyOptions opt;
    opt.timed_steps = steps;
    std::ostringstream out;
    out << "scope\tupdated_params\ts_per_step\tminutes_per_" << opt.budget_steps << "_steps\n";
    out.precision(6);
    for (const auto& r : measure_efficiency(b, mix, cfg, fs_list, opt))
        out << r.scope << '\t' << r.updated_params << '\t' << r.seconds_per_step << '\t' << r.steps_total_minutes
            << '\n';
    emit(o.out, out.str());
    return 0;
}

int cmd_inspect(const Common& o) {
    const CheckpointFile f(o.checkpoint);
    std::ostringstream out;
    out << to_json(f.manifest()).dump(2) << "\n\nname\tshape\tsha256\n";
    for (const auto& [name, e] : f.index()) {
        std::string shape;
        for (std::size_t i = 0; i < e.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(e.shape[i]);
        out << name << '\t' << shape << '\t' << tensor_sha256(f.read(name)) << '\n';
    }
    emit(o.out, out.str());
    return 0;
}

int cmd_toy_data(const Common& o, const std::string& kind, std::size_t n, std::size_t offset) {
    if (o.out.empty()) throw UsageError("toy-data needs --out");
    const ModelConfig cfg = ModelConfig::toy();
    LatentViewSpec latent;
    latent.seed = o.seed;
    ClassDataSpec cls;
    cls.seed = o.seed;
    const fs::path out = o.out;
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    auto items_from = [&](auto make) {
        std::vector<NamedItem> items;
        for (std::size_t i = 0; i < n; ++i) items.push_back({padded_id("x", offset + i), make(offset + i)});
        write_item_manifest(out, items);
    };
    std::mt19937_64 rng(o.seed);
    if (kind == "latent-pairs") write_pair_manifest(out, make_latent_pairs(cfg, ViewKind::image, ViewKind::audio, n, latent, offset));
    else if (kind == "image-caption-pairs") write_pair_manifest(out, make_class_pairs(cfg, ViewKind::image, n, cls, offset));
    else if (kind == "audio-caption-pairs") write_pair_manifest(out, make_class_pairs(cfg, ViewKind::audio, n, cls, offset));
    else if (kind == "latent-task") {
        write_retrieval_task(out, retrieval_task_from_pairs(make_latent_pairs(cfg, ViewKind::image, ViewKind::audio, n, latent, offset)));
    } else if (kind == "image-caption-task") {
        write_retrieval_task(out, retrieval_task_merging_text(make_class_pairs(cfg, ViewKind::image, n, cls, offset)));
    } else if (kind == "audio-caption-task") {
        write_retrieval_task(out, retrieval_task_merging_text(make_class_pairs(cfg, ViewKind::audio, n, cls, offset)));
    } else if (kind == "text-items") {
        items_from([&](std::size_t i) { return InputItem::make_text("toy text " + std::to_string(i) + " " + std::to_string(rng() % 1000)); });
    } else if (kind == "image-items") {
        items_from([&](std::size_t i) { return InputItem::make_image(gaussian_tensor({8, 8, 3}, 1.0, mix_seed(o.seed, std::to_string(i)))); });
    } else if (kind == "random-items") {
        items_from([&](std::size_t) {
            InputItem it = random_item(cfg, rng);
            // Manifests are JSON text; keep random text ASCII.
            auto ascii = [](std::string& s) { for (auto& ch : s) ch = char(' ' + (unsigned char)ch % 95); };
            ascii(it.text);
            for (auto& c : it.children) ascii(c.text);
            return it;
        });
    } else {
        throw UsageError("unknown toy-data kind '" + kind + "'");
    }
    std::cout << out.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gelato: frozen-tower multimodal embedding tools"};
    app.require_subcommand(1);
    Common o;

    auto seed_opt = [&](CLI::App* s) {
        s->add_option("--seed", o.seed, "Random seed")->each([&](const std::string&) { o.seed_set = true; });
    };
    auto bundle_opts = [&](CLI::App* s) {
        s->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
        s->add_option("--task", o.task, "retrieval|text-matching|clustering|classification");
        s->add_option("--modality", o.modality, "text|vision|audio|omni");
    };

    auto* train_cmd = app.add_subcommand("train", "Train projectors from a key=value config");
    train_cmd->add_option("--config", o.config, "Run config")->required();
    train_cmd->add_option("--out", o.out, "Root for run directories (default runs)");
    seed_opt(train_cmd);

    auto* embed_cmd = app.add_subcommand("embed", "Embed an item manifest");
    bundle_opts(embed_cmd);
    embed_cmd->add_option("input", o.input, "Item manifest (JSONL)")->required();
    embed_cmd->add_option("--dim", o.dim, "Truncation dimension or 'full'");
    embed_cmd->add_option("--out", o.out, "Output path (default stdout)");
    embed_cmd->add_option("--format", o.format, "binary|text");

    auto* eval_cmd = app.add_subcommand("eval", "nDCG@10 and recall@1 on a retrieval task file");
    bundle_opts(eval_cmd);
    eval_cmd->add_option("input", o.input, "Retrieval task file (JSONL)")->required();
    eval_cmd->add_option("--dim", o.dim, "Truncation dimension or 'full'");
    eval_cmd->add_option("--out", o.out, "Output path (default stdout)");

    std::vector<std::string> sweep_modalities;
    std::string sweep_dims, sweep_report = "both";
    auto* sweep_cmd = app.add_subcommand("sweep", "Truncation sweep over dimensions and modalities");
    sweep_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--task", o.task, "Task variant");
    sweep_cmd->add_option("--modality", sweep_modalities, "Modality (repeatable)")
        ->allow_extra_args(false);
    sweep_cmd->add_option("input", o.input, "Retrieval task file (JSONL)")->required();
    sweep_cmd->add_option("--dims", sweep_dims, "Comma-separated dimensions");
    sweep_cmd->add_option("--report", sweep_report, "tsv|plot|both");
    sweep_cmd->add_option("--out", o.out, "Output directory");

    std::string family = "vision";
    auto* ablate_cmd = app.add_subcommand("ablate", "Run the vision (I-V) or audio (I-III) ablation suite");
    ablate_cmd->add_option("--config", o.config, "Run config")->required();
    ablate_cmd->add_option("--family", family, "vision|audio");
    ablate_cmd->add_option("input", o.input, "Eval retrieval task file")->required();
    ablate_cmd->add_option("--out", o.out, "Root for run directories (default runs)");
    seed_opt(ablate_cmd);

    std::vector<std::string> bench_scopes;
    std::size_t bench_batch = 16, bench_steps = 50;
    std::string bench_data;
    auto* bench_cmd = app.add_subcommand("bench", "Updated params and seconds per step for each scope");
    bundle_opts(bench_cmd);
    bench_cmd->add_option("--scope", bench_scopes, "Freeze scope (repeatable)")
        ->allow_extra_args(false);
    bench_cmd->add_option("--batch", bench_batch, "Batch size");
    bench_cmd->add_option("--steps", bench_steps, "Timed steps per scope");
    bench_cmd->add_option("--data", bench_data, "Pair manifest (default synthetic)");
    bench_cmd->add_option("--out", o.out, "Output path (default stdout)");
    seed_opt(bench_cmd);

    auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint's manifest and tensor table");
    inspect_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    inspect_cmd->add_option("--out", o.out, "Output path (default stdout)");

    std::string toy_kind;
    std::size_t toy_n = 64, toy_offset = 0;
    auto* toy_cmd = app.add_subcommand("toy-data", "Write synthetic manifests");
    toy_cmd->add_option("kind", toy_kind,
                        "latent-pairs|image-caption-pairs|audio-caption-pairs|latent-task|image-caption-task|"
                        "audio-caption-task|text-items|image-items|random-items")
        ->required();
    toy_cmd->add_option("--n", toy_n, "Number of records");
    toy_cmd->add_option("--offset", toy_offset, "Index of the first generated sample");
    toy_cmd->add_option("--out", o.out, "Output manifest path")->required();
    seed_opt(toy_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(o);
        if (*embed_cmd) return cmd_embed(o);
        if (*eval_cmd) return cmd_eval(o);
        if (*sweep_cmd) return cmd_sweep(o, sweep_modalities, sweep_dims, sweep_report);
        if (*ablate_cmd) return cmd_ablate(o, family);
        if (*bench_cmd) return cmd_bench(o, bench_scopes, bench_batch, bench_steps, bench_data);
        if (*inspect_cmd) return cmd_inspect(o);
        if (*toy_cmd) return cmd_toy_data(o, toy_kind, toy_n, toy_offset);
    } catch (const UsageError& e) {
        std::cerr << "gelato: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "gelato: " << e.what() << "\n";
        return e.category() == Error::Category::numeric ? kExitNumeric : kExitData;
    } catch (const std::exception& e) {
        std::cerr << "gelato: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
