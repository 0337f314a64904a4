#pragma once

namespace geomint {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace geomint
