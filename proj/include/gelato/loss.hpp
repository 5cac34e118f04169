#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gelato/ops.hpp"

namespace gelato {

inline const std::vector<std::size_t> kToyPrefixes{8, 16, 32, 64};
inline const std::vector<std::size_t> kSmallPrefixes{32, 64, 128, 256, 512, 768, 1024};
inline const std::vector<std::size_t> kNanoPrefixes{32, 64, 128, 256, 512, 768};

inline void validate_prefixes(const std::vector<std::size_t>& k_set, std::size_t d) {
    if (k_set.empty()) throw ConfigError("prefix set is empty");
    for (std::size_t i = 0; i < k_set.size(); ++i) {
        if (k_set[i] == 0 || k_set[i] > d) {
            throw ConfigError("prefix " + std::to_string(k_set[i]) + " outside [1, " + std::to_string(d) + "]");
        }
        if (i && k_set[i] <= k_set[i - 1]) throw ConfigError("prefix set must be strictly ascending");
    }
}

namespace detail {
inline Var normalized_prefix(Tape& t, Var x, std::size_t k, const char* side) {
    try {
        return l2_normalize(t, slice_cols(t, x, 0, k));
    } catch (const ZeroNormError& e) {
        throw ZeroNormError(std::string(side) + " prefix (k=" + std::to_string(k) + "): " + e.what());
    }
}
} // namespace detail

// s_ij = cos(u_i[:k], v_j[:k]) / tau, as a [B, B] matrix.
inline Var similarity_matrix(Tape& t, Var u, Var v, std::size_t k, double tau) {
    const Tensor& uv = t.value(u);
    const Tensor& vv = t.value(v);
    if (uv.rank() != 2 || uv.shape() != vv.shape()) {
        throw DimensionError("left " + shape_str(uv.shape()) + " and right " + shape_str(vv.shape()) +
                             " must be equal [B, d] matrices");
    }
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    if (k == 0 || k > uv.cols()) throw DimensionError("prefix " + std::to_string(k) + " exceeds width");
    Var un = detail::normalized_prefix(t, u, k, "left");
    Var vn = detail::normalized_prefix(t, v, k, "right");
    return scale(t, matmul_nt(t, un, vn), 1.0 / tau);
}

// Bidirectional in-batch InfoNCE at one prefix length:
// -(1/2B) sum_i [log p_lr(i|i) + log p_rl(i|i)].
inline Var infonce(Tape& t, Var u, Var v, std::size_t k, double tau) {
    Var s = similarity_matrix(t, u, v, k, tau);
    const std::size_t batch = t.value(s).rows();
    Var left_to_right = trace(t, log_softmax_rows(t, s));
    Var right_to_left = trace(t, log_softmax_rows(t, transpose(t, s)));
    return scale(t, add(t, left_to_right, right_to_left), -1.0 / (2.0 * double(batch)));
}

// Sum of InfoNCE terms over the prefix set, accumulated in ascending k.
inline Var matryoshka_loss(Tape& t, Var u, Var v, double tau, const std::vector<std::size_t>& k_set) {
    validate_prefixes(k_set, t.value(u).cols());
    Var total = infonce(t, u, v, k_set[0], tau);
    for (std::size_t i = 1; i < k_set.size(); ++i) total = add(t, total, infonce(t, u, v, k_set[i], tau));
    return total;
}

struct ContrastiveBatch {
    Tensor left;  // [B, d]
    Tensor right; // [B, d]
    double tau = 0.02;
    std::vector<std::size_t> k_set = kToyPrefixes;
};

inline Tensor similarity_matrix(const Tensor& u, const Tensor& v, std::size_t k, double tau) {
    Tape t;
    return t.value(similarity_matrix(t, t.constant(u), t.constant(v), k, tau));
}

inline double infonce(const Tensor& u, const Tensor& v, std::size_t k, double tau) {
    Tape t;
    return t.value(infonce(t, t.constant(u), t.constant(v), k, tau)).item();
}

inline double matryoshka_loss(const ContrastiveBatch& b) {
    Tape t;
    return t.value(matryoshka_loss(t, t.constant(b.left), t.constant(b.right), b.tau, b.k_set)).item();
}

} // namespace gelato
