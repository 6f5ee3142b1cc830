#pragma once

namespace depscreen {

constexpr const char* kVersion = "0.1.0";

}  // namespace depscreen
