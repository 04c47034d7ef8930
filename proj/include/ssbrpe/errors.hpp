// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ssbrpe {

// Error categories map onto CLI exit codes: config/compatibility -> 2,
// data/io -> 3, numeric -> 4.
enum class ErrorKind {
  kDimension,
  kContract,
  kNumeric,
  kDomain,
  kData,
  kIo,
  kConfig,
  kCompatibility,
  kSampling,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define SSBRPE_DEFINE_ERROR(Name, Kind)                                 \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

SSBRPE_DEFINE_ERROR(DimensionError, kDimension)
SSBRPE_DEFINE_ERROR(ContractError, kContract)
SSBRPE_DEFINE_ERROR(NumericError, kNumeric)
SSBRPE_DEFINE_ERROR(DomainError, kDomain)
SSBRPE_DEFINE_ERROR(DataError, kData)
SSBRPE_DEFINE_ERROR(IoError, kIo)
SSBRPE_DEFINE_ERROR(ConfigError, kConfig)
SSBRPE_DEFINE_ERROR(CompatibilityError, kCompatibility)
SSBRPE_DEFINE_ERROR(SamplingError, kSampling)

#undef SSBRPE_DEFINE_ERROR

int exit_code_for(ErrorKind kind);

}  // namespace ssbrpe
