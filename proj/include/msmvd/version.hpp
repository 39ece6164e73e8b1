// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace msmvd {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever the on-disk layout of the corresponding format changes.
inline constexpr unsigned kCheckpointFormatVersion = 1;
inline constexpr unsigned kGridCacheFormatVersion = 1;
inline constexpr unsigned kMapBlobFormatVersion = 1;

}  // namespace msmvd
