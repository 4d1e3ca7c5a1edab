#pragma once

namespace highdan {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace highdan
