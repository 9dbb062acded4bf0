// Model container format (.vaec): magic "VAEC", version byte, JSON header,
// then raw little-endian tensor payloads in header order. Round trips are
// bit-exact, including qparams and masks.
#pragma once

#include <string>

#include "vaecomp/graph.hpp"

namespace vaecomp {

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace vaecomp
