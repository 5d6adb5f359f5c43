// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cclpol/assembler.hpp"

namespace cclpol::testing {

inline std::filesystem::path source_dir() { return CCLPOL_SOURCE_DIR; }

inline std::string read_text(const std::filesystem::path& rel) {
    std::ifstream in(source_dir() / rel);
    if (!in) throw std::runtime_error("cannot open " + rel.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Program load(const std::filesystem::path& rel) { return assemble(read_text(rel)); }

} // namespace cclpol::testing
