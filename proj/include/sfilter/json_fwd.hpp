#pragma once

#include <nlohmann/json_fwd.hpp>

namespace sfilter {
using json = nlohmann::json;
}
