#pragma once

#include <gtest/gtest.h>

#include "dhn/error.hpp"

#define EXPECT_DHN_ERROR(statement, expected_kind)                                   \
  do {                                                                               \
    try {                                                                            \
      static_cast<void>(statement);                                                 \
      ADD_FAILURE() << "expected " << dhn::to_string(expected_kind) << ", no throw"; \
    } catch (const dhn::Error& err_) {                                               \
      EXPECT_EQ(err_.kind(), expected_kind) << err_.what();                          \
    }                                                                                \
  } while (0)
