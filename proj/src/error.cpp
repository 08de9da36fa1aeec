#include "stwd/error.hpp"

namespace stwd {

NotPositiveDefinite::NotPositiveDefinite(std::size_t minor, const std::string& what)
    : Error(what + " (leading minor " + std::to_string(minor) + " not positive)"),
      minor_(minor) {}

void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace stwd
