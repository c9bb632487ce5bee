#include "advlab/hash.hpp"

#include <cstdio>

namespace advlab {

std::string Fnv1a64::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string fnv1a64_hex(std::span<const std::byte> bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.hex();
}

std::string fnv1a64_hex(std::string_view s) {
  Fnv1a64 h;
  h.update(s);
  return h.hex();
}

}  // namespace advlab
