#pragma once

#include <optional>

#include "n4n/core/error.hpp"

namespace n4n::test {

/// Code of the n4n::Error thrown by fn, or nullopt if it returns normally.
template <class Fn>
std::optional<ErrorCode> error_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace n4n::test
