#pragma once

#include <stdexcept>
#include <string>

namespace gatesim {

// Base class for every failure the library reports.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class NonHermitianInput : public Error {
  public:
    using Error::Error;
};

class DimensionMismatch : public Error {
  public:
    using Error::Error;
};

class IndexOutOfRange : public Error {
  public:
    using Error::Error;
};

// The state has zero closeness to every gate, so it cannot be normalized.
class AllGatesClosed : public Error {
  public:
    using Error::Error;
};

// A ledger left the interval the selection rule guarantees. Always a bug.
class BoundViolation : public Error {
  public:
    using Error::Error;
};

class NotAPartition : public Error {
  public:
    using Error::Error;
};

} // namespace gatesim
