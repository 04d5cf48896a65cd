#pragma once

namespace qrel {

inline constexpr const char* kToolVersion = "0.1.0";

} // namespace qrel
