#pragma once

namespace qdz {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace qdz
