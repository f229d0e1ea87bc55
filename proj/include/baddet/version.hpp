#pragma once

namespace baddet {
inline constexpr const char* kVersion = "0.1.0";
}
