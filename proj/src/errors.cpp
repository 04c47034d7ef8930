// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/errors.hpp"

namespace ssbrpe {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kCompatibility:
      return 2;
    case ErrorKind::kData:
    case ErrorKind::kIo:
    case ErrorKind::kSampling:
    case ErrorKind::kDomain:
      return 3;
    case ErrorKind::kNumeric:
      return 4;
    case ErrorKind::kDimension:
    case ErrorKind::kContract:
      return 4;
  }
  return 1;
}

}  // namespace ssbrpe
