// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

TEST_CASE("placeholder test_scenegen") { CHECK(true); }
