#pragma once

#include <string>
#include <string_view>

namespace mep {

/// Lowercase hex SHA-256 digest of `data`.
std::string sha256_hex(std::string_view data);

/// First 16 hex characters of the SHA-256 digest; used for sample ids and
/// placeholder digests where a full digest is noise.
std::string short_digest(std::string_view data);

}  // namespace mep
