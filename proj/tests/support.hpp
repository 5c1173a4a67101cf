#pragma once

#include <doctest.h>

#include <functional>

#include "optin/error.hpp"

// Passes iff `expr` throws optin::Error of the given kind.
#define CHECK_THROWS_KIND(expr, k)                                   \
  do {                                                               \
    bool thrown_ = false;                                            \
    try {                                                            \
      (void)(expr);                                                  \
    } catch (const optin::Error& e_) {                               \
      thrown_ = true;                                                \
      CHECK_MESSAGE(e_.kind() == (k), "wrong kind: " << e_.what()); \
    }                                                                \
    CHECK_MESSAGE(thrown_, "no optin::Error thrown");                \
  } while (0)
