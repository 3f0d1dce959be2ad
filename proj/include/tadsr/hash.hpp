#pragma once

#include <span>
#include <string>
#include <string_view>

namespace tadsr {

/// Incremental SHA-256, hex digest.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t size);
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const float> values);

}  // namespace tadsr
