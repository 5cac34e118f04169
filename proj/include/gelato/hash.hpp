#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include <openssl/evp.h>

#include "gelato/tensor.hpp"

namespace gelato {

inline std::string sha256_hex(std::span<const unsigned char> bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

inline std::string sha256_hex(const std::string& s) {
    return sha256_hex(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

// Digest over the shape and the raw double values.
inline std::string tensor_sha256(const Tensor& t) {
    std::string buf;
    for (auto d : t.shape()) buf.append(reinterpret_cast<const char*>(&d), sizeof(d));
    buf.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
    return sha256_hex(buf);
}

} // namespace gelato
