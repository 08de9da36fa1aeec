#pragma once

namespace stwd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stwd
