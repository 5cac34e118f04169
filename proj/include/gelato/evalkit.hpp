#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gelato/registry.hpp"

namespace gelato {

using Qrels = std::map<std::string, int>; // doc id -> relevance grade

// Graded nDCG: gain 2^rel - 1, discount log2(rank + 1).
inline double ndcg_at_k(const std::vector<std::string>& ranked, const Qrels& qrels, std::size_t k) {
    if (k < 1) throw ConfigError("nDCG cutoff must be >= 1");
    std::vector<int> grades;
    for (const auto& [_, g] : qrels) {
        if (g < 0) throw ConfigError("relevance grades must be >= 0");
        if (g > 0) grades.push_back(g);
    }
    if (grades.empty()) throw UndefinedMetricError("query has no relevant document");
    auto gain = [](int g) { return std::exp2(double(g)) - 1.0; };
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
        auto it = qrels.find(ranked[i]);
        if (it != qrels.end()) dcg += gain(it->second) / std::log2(double(i) + 2.0);
    }
    std::sort(grades.rbegin(), grades.rend());
    double ideal = 0.0;
    for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) ideal += gain(grades[i]) / std::log2(double(i) + 2.0);
    return dcg / ideal;
}

struct RetrievalTask {
    std::string name = "task";
    std::vector<NamedItem> queries;
    std::vector<NamedItem> corpus;
    std::map<std::string, Qrels> qrels; // query id -> judgments

    void validate() const {
        std::set<std::string> qids, dids;
        for (const auto& q : queries)
            if (!qids.insert(q.id).second) throw IntegrityError("duplicate query id '" + q.id + "'");
        for (const auto& d : corpus)
            if (!dids.insert(d.id).second) throw IntegrityError("duplicate doc id '" + d.id + "'");
        for (const auto& [q, rels] : qrels) {
            if (!qids.count(q)) throw IntegrityError("qrel references unknown query '" + q + "'");
            for (const auto& [d, g] : rels) {
                if (!dids.count(d)) throw IntegrityError("qrel references unknown doc '" + d + "'");
                if (g < 0) throw IntegrityError("negative relevance grade for (" + q + ", " + d + ")");
            }
        }
        for (const auto& q : queries) {
            auto it = qrels.find(q.id);
            const bool pos = it != qrels.end() &&
                             std::any_of(it->second.begin(), it->second.end(), [](const auto& kv) { return kv.second > 0; });
            if (!pos) throw UndefinedMetricError("query '" + q.id + "' has no relevant document");
        }
    }
};

inline std::string padded_id(const char* prefix, std::size_t i) {
    std::string n = std::to_string(i);
    return prefix + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

// Left items query, right items form the corpus; pair i is the only positive.
inline RetrievalTask retrieval_task_from_pairs(const PairDataset& ds) {
    RetrievalTask t;
    t.name = ds.name;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        const auto q = padded_id("q", i), d = padded_id("d", i);
        t.queries.push_back({q, ds.pairs[i].first});
        t.corpus.push_back({d, ds.pairs[i].second});
        t.qrels[q][d] = 1;
    }
    return t;
}

// Like retrieval_task_from_pairs, but right-hand text items with equal
// content collapse into one doc (e.g. one caption per class).
inline RetrievalTask retrieval_task_merging_text(const PairDataset& ds) {
    RetrievalTask t;
    t.name = ds.name;
    std::map<std::string, std::string> doc_of_text;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        const auto q = padded_id("q", i);
        const InputItem& right = ds.pairs[i].second;
        std::string d;
        if (right.kind == InputItem::Kind::text) {
            auto [it, fresh] = doc_of_text.try_emplace(right.text, padded_id("d", t.corpus.size()));
            d = it->second;
            if (fresh) t.corpus.push_back({d, right});
        } else {
            d = padded_id("d", t.corpus.size());
            t.corpus.push_back({d, right});
        }
        t.queries.push_back({q, ds.pairs[i].first});
        t.qrels[q][d] = 1;
    }
    return t;
}

// Task file records: {"query": id, <item>}, {"doc": id, <item>}, {"qrel": [qid, did, grade]}.
inline RetrievalTask read_retrieval_task(const std::filesystem::path& path) {
    RetrievalTask t;
    t.name = path.stem().string();
    const auto base = path.parent_path();
    detail::for_each_record(path, [&](const nlohmann::json& j, std::size_t) {
        if (j.contains("qrel")) {
            const auto& r = j.at("qrel");
            t.qrels[r.at(0).get<std::string>()][r.at(1).get<std::string>()] = r.at(2).get<int>();
        } else if (j.contains("query")) {
            t.queries.push_back({j.at("query").get<std::string>(), item_from_json(j, base)});
        } else if (j.contains("doc")) {
            t.corpus.push_back({j.at("doc").get<std::string>(), item_from_json(j, base)});
        } else {
            throw IoError("record is neither query, doc nor qrel");
        }
    });
    t.validate();
    return t;
}

inline void write_retrieval_task(const std::filesystem::path& path, const RetrievalTask& t) {
    const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
    const std::string stem = path.stem().string();
    std::string out;
    for (const auto& q : t.queries) {
        auto j = item_to_json(q.item, dir, stem + "." + q.id);
        j["query"] = q.id;
        out += detail::dump_record(j) + "\n";
    }
    for (const auto& d : t.corpus) {
        auto j = item_to_json(d.item, dir, stem + "." + d.id);
        j["doc"] = d.id;
        out += detail::dump_record(j) + "\n";
    }
    for (const auto& [q, rels] : t.qrels)
        for (const auto& [d, g] : rels) out += nlohmann::json{{"qrel", {q, d, g}}}.dump() + "\n";
    io::write_file(path, out);
}

// Corpus indices by descending cosine, ties by ascending doc id.
inline std::vector<std::size_t> rank_by_cosine(const Tensor& query, const std::vector<Tensor>& docs,
                                               const std::vector<std::string>& doc_ids) {
    std::vector<double> score(docs.size());
    for (std::size_t j = 0; j < docs.size(); ++j) score[j] = cosine(query, docs[j]);
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return doc_ids[a] < doc_ids[b];
    });
    return order;
}

struct SweepPoint {
    std::size_t k = 0;
    double ndcg10 = 0.0;
    double recall1 = 0.0;
};

struct SweepRow {
    std::string modality;
    std::string profile;
    std::string task;
    std::size_t k = 0;
    double ndcg10 = 0.0;
    double recall1 = 0.0;
};

using SweepReport = std::vector<SweepRow>;

// Scores pre-computed embeddings at each truncation dim.
inline std::vector<SweepPoint> evaluate_embeddings(const RetrievalTask& task, const std::vector<Embedding>& q,
                                                   const std::vector<Embedding>& d, const std::vector<std::size_t>& k_dims,
                                                   std::size_t cutoff = 10) {
    std::vector<std::string> doc_ids;
    for (const auto& x : task.corpus) doc_ids.push_back(x.id);
    std::vector<SweepPoint> out;
    for (std::size_t k : k_dims) {
        std::vector<Tensor> dv;
        for (const auto& e : d) dv.push_back(truncate(e, k));
        double ndcg = 0.0, r1 = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            const auto order = rank_by_cosine(truncate(q[i], k), dv, doc_ids);
            std::vector<std::string> ranked;
            for (std::size_t j : order) ranked.push_back(doc_ids[j]);
            const auto& rels = task.qrels.at(task.queries[i].id);
            ndcg += ndcg_at_k(ranked, rels, cutoff);
            auto top = rels.find(ranked.front());
            r1 += (top != rels.end() && top->second > 0) ? 1.0 : 0.0;
        }
        out.push_back({k, ndcg / double(q.size()), r1 / double(q.size())});
    }
    return out;
}

// Mean nDCG@10 (and recall@1) for each k; the full dimension is always
// included. Embedding failures carry the offending item id.
inline std::vector<SweepPoint> retrieval_eval(const RetrievalTask& task, const ModelBundle& b,
                                              std::vector<std::size_t> k_dims, std::size_t threads = 1) {
    task.validate();
    const std::size_t d = b.config.text.d_text;
    for (auto k : k_dims)
        if (k < 1 || k > d) throw DimensionError("sweep dimension " + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
    if (std::find(k_dims.begin(), k_dims.end(), d) == k_dims.end()) k_dims.push_back(d);
    std::sort(k_dims.begin(), k_dims.end());
    k_dims.erase(std::unique(k_dims.begin(), k_dims.end()), k_dims.end());

    auto embed_all = [&](const std::vector<NamedItem>& xs, const char* role) {
        std::vector<InputItem> items;
        for (const auto& x : xs) items.push_back(x.item);
        try {
            return embed_batch(items, b, threads);
        } catch (const Error& e) {
            // embed_batch prefixes "item i: "; translate the index to an id.
            const std::string msg = e.what();
            std::size_t idx = 0;
            if (std::sscanf(msg.c_str(), "item %zu:", &idx) == 1 && idx < xs.size()) {
                const std::string where = std::string(role) + " '" + xs[idx].id + "': " + msg;
                if (dynamic_cast<const ModalityUnavailableError*>(&e)) throw ModalityUnavailableError(where);
                throw Error(where, e.category());
            }
            throw;
        }
    };
    const auto q = embed_all(task.queries, "query");
    const auto c = embed_all(task.corpus, "doc");
    return evaluate_embeddings(task, q, c, k_dims);
}

// Cross-modal recall@1 over aligned pairs at full dimension.
inline double pair_recall_at_1(const PairDataset& ds, const ModelBundle& b, std::size_t threads = 1) {
    const auto pts = retrieval_eval(retrieval_task_from_pairs(ds), b, {b.config.text.d_text}, threads);
    return pts.back().recall1;
}

inline void write_sweep_tsv(std::ostream& out, const SweepReport& rows) {
    out << "modality\tprofile\ttask\tk\tndcg@10\trecall@1\n";
    out << std::setprecision(10);
    for (const auto& r : rows)
        out << r.modality << '\t' << r.profile << '\t' << r.task << '\t' << r.k << '\t' << r.ndcg10 << '\t' << r.recall1
            << '\n';
}

// x = k, one nDCG@10 column per (modality/profile) series; blank where a
// series has no point at that k.
inline void write_sweep_plot_data(std::ostream& out, const SweepReport& rows) {
    std::vector<std::string> series;
    std::map<std::size_t, std::map<std::string, double>> grid;
    for (const auto& r : rows) {
        const std::string s = r.modality + "/" + r.profile;
        if (std::find(series.begin(), series.end(), s) == series.end()) series.push_back(s);
        grid[r.k][s] = r.ndcg10;
    }
    out << "k";
    for (const auto& s : series) out << '\t' << s;
    out << '\n' << std::setprecision(10);
    for (const auto& [k, vals] : grid) {
        out << k;
        for (const auto& s : series) {
            out << '\t';
            if (auto it = vals.find(s); it != vals.end()) out << it->second;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Ablation suite

struct AblationRun {
    std::string name;
    FreezeScope scope;
    double lr = 2e-4;
    std::size_t steps = 0;
    std::optional<TrainConfig::Stage2> stage2;
    bool released = false; // the shipped recipe
};

struct EvalPoint {
    int stage = 1;
    std::size_t step = 0;
    double ndcg10 = 0.0;
};

struct AblationResult {
    std::string name;
    std::string scope;
    bool released = false;
    std::map<std::string, std::string> start_hashes;        // every resident tensor before training
    std::map<std::string, std::string> stage1_end_hashes;   // two-stage runs only
    std::map<std::string, std::string> stage2_start_hashes; // two-stage runs only
    std::map<std::string, std::string> final_hashes;
    LossTrace trace;
    std::vector<EvalPoint> evals;
    double final_ndcg10 = 0.0;
};

struct AblationReport {
    std::vector<AblationResult> runs;
};

inline std::vector<AblationRun> vision_ablation_runs(std::size_t steps, std::size_t stage2_steps, double lr = 2e-4,
                                                     double encoder_lr = 1e-5) {
    using K = FreezeScope::Kind;
    return {
        {"I", {K::projector_only, {}}, lr, steps, std::nullopt, true},
        {"II", {K::projector_plus_fc1, {}}, lr, steps, std::nullopt, false},
        {"III", {K::projector_plus_encoder, {}}, encoder_lr, steps, std::nullopt, false},
        {"IV", {K::projector_only, {}}, lr, steps, TrainConfig::Stage2{{K::projector_plus_fc1, {}}, lr, stage2_steps}, false},
        {"V", {K::projector_only, {}}, lr, steps,
         TrainConfig::Stage2{{K::projector_plus_encoder, {}}, encoder_lr, stage2_steps}, false},
    };
}

inline std::vector<AblationRun> audio_ablation_runs(std::size_t steps, std::size_t stage2_steps, double lr = 2e-4,
                                                    double encoder_lr = 1e-5) {
    using K = FreezeScope::Kind;
    return {
        {"I", {K::audio_projector_only, {}}, lr, steps, std::nullopt, true},
        {"II", {K::audio_projector_plus_encoder, {}}, encoder_lr, steps, std::nullopt, false},
        {"III", {K::audio_projector_only, {}}, lr, steps,
         TrainConfig::Stage2{{K::audio_projector_plus_encoder, {}}, encoder_lr, stage2_steps}, false},
    };
}

// Every run starts from the same `init` bundle (same reset projector) with
// the same seed, data and eval task. Eval happens every cfg.check_interval
// steps and at the end of each stage.
inline AblationReport run_ablation_suite(const ModelBundle& init, const std::vector<AblationRun>& runs,
                                         const MixtureSpec& data, const TrainConfig& base, const RetrievalTask& eval) {
    AblationReport rep;
    const std::vector<std::size_t> full{init.config.text.d_text};
    for (const auto& run : runs) {
        TrainConfig cfg = base;
        cfg.scope = run.scope;
        cfg.lr_max = run.lr;
        cfg.steps = run.steps;
        cfg.stage2 = run.stage2;
        AblationResult r;
        r.name = run.name;
        r.scope = to_string(run.scope) + (run.stage2 ? " -> " + to_string(run.stage2->scope) : "");
        r.released = run.released;
        r.start_hashes = all_hashes(init);
        auto hook = [&](int stage, std::size_t done, const ModelBundle& b) {
            r.evals.push_back({stage, done, retrieval_eval(eval, b, full).back().ndcg10});
        };
        TrainResult tr = train(init, data, cfg, hook);
        r.trace = std::move(tr.trace);
        r.stage1_end_hashes = std::move(tr.stage1_end_hashes);
        r.stage2_start_hashes = std::move(tr.stage2_start_hashes);
        r.final_hashes = all_hashes(tr.bundle);
        r.final_ndcg10 = r.evals.empty() ? retrieval_eval(eval, tr.bundle, full).back().ndcg10 : r.evals.back().ndcg10;
        rep.runs.push_back(std::move(r));
    }
    return rep;
}

// Run summary, then every eval point; runs in the given order.
inline void write_ablation_report(std::ostream& out, const AblationReport& rep) {
    out << std::setprecision(10);
    out << "run\tscope\treleased\tfinal_ndcg@10\n";
    for (const auto& r : rep.runs)
        out << r.name << '\t' << r.scope << '\t' << (r.released ? "yes" : "no") << '\t' << r.final_ndcg10 << '\n';
    out << "\nrun\tstage\tstep\tndcg@10\n";
    for (const auto& r : rep.runs)
        for (const auto& e : r.evals) out << r.name << '\t' << e.stage << '\t' << e.step << '\t' << e.ndcg10 << '\n';
}

// x = cumulative step, one column per run.
inline void write_ablation_plot_data(std::ostream& out, const AblationReport& rep) {
    std::map<std::size_t, std::map<std::string, double>> grid;
    for (const auto& r : rep.runs) {
        std::size_t stage1 = 0;
        for (const auto& e : r.evals)
            if (e.stage == 1) stage1 = std::max(stage1, e.step);
        for (const auto& e : r.evals) grid[e.stage == 1 ? e.step : stage1 + e.step][r.name] = e.ndcg10;
    }
    out << "step";
    for (const auto& r : rep.runs) out << '\t' << r.name;
    out << '\n' << std::setprecision(10);
    for (const auto& [x, vals] : grid) {
        out << x;
        for (const auto& r : rep.runs) {
            out << '\t';
            if (auto it = vals.find(r.name); it != vals.end()) out << it->second;
        }
        out << '\n';
    }
}

} // namespace gelato
