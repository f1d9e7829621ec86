//
// Project MolText - Copyright 2026 MolText Developers.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace moltext {

// Base class for every error raised by this library.
struct Error: std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace moltext
