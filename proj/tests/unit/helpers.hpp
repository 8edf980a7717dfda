#pragma once

#include <filesystem>
#include <string>

#include "doctest.h"
#include "molly/error.hpp"

namespace testing {

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(MOLLY_SOURCE_DIR) / rel;
}

// Runs `expr` and returns the molly::Error it throws; fails the test otherwise.
template <typename F>
molly::Error capture_error(F&& f) {
  try {
    f();
  } catch (const molly::Error& e) {
    return e;
  }
  FAIL("expected a molly::Error");
  return molly::Error(molly::ErrorCode::PreconditionFailed, "unreachable");
}

}  // namespace testing

#define CHECK_ERROR_CODE(expr, expected_code)                                     \
  do {                                                                            \
    const auto molly_err_ = ::testing::capture_error([&] { (void)(expr); });      \
    CHECK_MESSAGE(molly_err_.code() == (expected_code), molly_err_.what());       \
  } while (0)
