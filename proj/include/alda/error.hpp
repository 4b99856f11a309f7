#pragma once

#include <stdexcept>
#include <string>

namespace alda {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or configuration detected before any work is done.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file exists but its contents do not match the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Open/read/write failure at the OS level.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace alda
