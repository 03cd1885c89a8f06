#pragma once

#include <stdexcept>
#include <string>

namespace xaib {

// Base class for every error raised by the library. Computational failures
// (shape mismatches, degenerate inputs, divergence) throw Error directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-system, decoding and schema failures. The CLI maps these to exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace xaib
