// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint with a pinned little-endian layout so files are
// byte-identical across runs and platforms. See README for the field-level
// byte layout of mask and codebook records.

#pragma once

#include <optional>
#include <string>

#include "subnetcl/engine.hpp"

namespace subnetcl::checkpoint {

void save(const engine::EngineState& state, const std::string& config_echo,
          const std::string& path);

struct Loaded {
  engine::EngineState state;
  std::string config_echo;
};

Loaded load(const std::string& path);

// Loads only when the file exists and its config echo matches; returns
// nullopt (fresh start) otherwise.
std::optional<Loaded> try_load_compatible(const std::string& path,
                                          const std::string& config_echo);

}  // namespace subnetcl::checkpoint
