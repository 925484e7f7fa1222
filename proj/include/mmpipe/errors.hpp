// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception types raised by the planner. Validation-style operations report
// problems as values instead (see validate_model, validate_schedule,
// validate_plan).

#pragma once

#include <stdexcept>
#include <string>

namespace mmpipe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MMPIPE_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(#Name ": " + what) {}        \
  }

MMPIPE_DEFINE_ERROR(SampleTooLarge);
MMPIPE_DEFINE_ERROR(NotFound);
MMPIPE_DEFINE_ERROR(InvalidArgument);
MMPIPE_DEFINE_ERROR(EmptyStage);
MMPIPE_DEFINE_ERROR(EmptyInput);
MMPIPE_DEFINE_ERROR(CycleDetected);
MMPIPE_DEFINE_ERROR(TooManyChunks);
MMPIPE_DEFINE_ERROR(Deadlock);
MMPIPE_DEFINE_ERROR(Infeasible);
MMPIPE_DEFINE_ERROR(TooLarge);
MMPIPE_DEFINE_ERROR(InvalidSchedule);
MMPIPE_DEFINE_ERROR(ParseError);

#undef MMPIPE_DEFINE_ERROR

}  // namespace mmpipe
