#pragma once

namespace cartiq {

inline constexpr const char* kVersion = "0.1.0";

} // namespace cartiq
