#ifndef GDPS_TESTS_SUPPORT_HPP
#define GDPS_TESTS_SUPPORT_HPP

#include <functional>
#include <string>

#include <gtest/gtest.h>

#include "gdps/error.hpp"

/// Asserts that `fn` throws gdps::Error with the given stage, exit code, and a
/// message containing `needle`.
inline ::testing::AssertionResult throws_gdps(const std::function<void()>& fn, const std::string& stage, int exit_code,
                                              const std::string& needle = "") {
  try {
    fn();
  } catch (const gdps::Error& e) {
    const std::string what = e.what();
    if (e.stage() != stage) return ::testing::AssertionFailure() << "stage '" << e.stage() << "' != '" << stage << "': " << what;
    if (e.exit_code() != exit_code) return ::testing::AssertionFailure() << "exit code " << e.exit_code() << ": " << what;
    if (what.find(needle) == std::string::npos)
      return ::testing::AssertionFailure() << "message lacks '" << needle << "': " << what;
    return ::testing::AssertionSuccess();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "unexpected exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "no exception thrown";
}

#endif
