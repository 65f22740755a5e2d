// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "fesgssm/harness/experiment.hpp"

namespace fesgssm::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian binary container: magic, version, payload length, payload,
/// FNV-1a checksum of the payload. The payload holds the resolved config,
/// the seed, every parameter set and optimiser state, both buffers, all
/// random streams, metrics, and counters.
std::string serialize_run(const RunState& st);
/// Throws IoError naming the byte offset on truncation or corruption, and
/// on a version mismatch.
RunState deserialize_run(const std::string& bytes);

void save_checkpoint(const std::string& path, const RunState& st);
RunState load_checkpoint(const std::string& path);

}  // namespace fesgssm::harness
