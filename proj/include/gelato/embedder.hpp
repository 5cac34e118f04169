#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "gelato/sequencer.hpp"

namespace gelato {

struct Embedding {
    Tensor full;           // unit norm
    Tensor raw_last_state; // pooled state before normalization
};

// Pooled (pre-normalization) state of the final sequence position, [1, d_text].
inline Var pooled_state(Tape& t, const InputItem& item, const ModelBundle& b) {
    const TokenSequence seq = serialize(item, b.config);
    const MediaSet media = collect_media(item, b.config);
    Var states = materialize(t, seq, b, media);
    Var hidden = run_backbone(t, b.text, &b.lora, states);
    return slice_rows(t, hidden, t.value(hidden).rows() - 1, 1);
}

inline Embedding embed(const InputItem& item, const ModelBundle& b) {
    Tape t;
    Var raw = pooled_state(t, item, b);
    Embedding e;
    e.raw_last_state = t.value(raw).reshaped({b.config.text.d_text});
    e.full = l2_normalize(e.raw_last_state);
    return e;
}

// First k components of the pooled state, re-normalized.
inline Tensor truncate(const Embedding& e, std::size_t k) {
    const std::size_t d = e.raw_last_state.size();
    if (k < 1 || k > d) {
        throw DimensionError("truncation dimension " + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
    }
    std::vector<double> prefix(e.raw_last_state.values().begin(), e.raw_last_state.values().begin() + k);
    return l2_normalize(Tensor::vec(std::move(prefix)));
}

// Embeds every item; order is preserved and results do not depend on the
// thread count. The first failing item is reported with its index.
inline std::vector<Embedding> embed_batch(const std::vector<InputItem>& items, const ModelBundle& b,
                                          std::size_t threads = 1) {
    std::vector<Embedding> out(items.size());
    std::vector<std::exception_ptr> errors(items.size());
    auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < items.size(); i += stride) {
            try {
                out[i] = embed(items[i], b);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, items.size()));
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const ModalityUnavailableError& e) {
            throw ModalityUnavailableError("item " + std::to_string(i) + ": " + e.what());
        } catch (const Error& e) {
            if (e.category() == Error::Category::numeric) throw NumericError("item " + std::to_string(i) + ": " + e.what());
            throw Error("item " + std::to_string(i) + ": " + e.what(), e.category());
        }
    }
    return out;
}

} // namespace gelato
