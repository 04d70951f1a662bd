#pragma once

#include <iostream>
#include <string_view>

namespace atp {

inline void log_warning(std::string_view message) { std::cerr << "warning: " << message << '\n'; }

}  // namespace atp
