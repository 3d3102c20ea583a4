#pragma once

#include <stdexcept>
#include <string>

namespace ceph {

// Missing or unreadable files, failed writes.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed annotation, weight or checkpoint content.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Violated precondition: shape disagreement, frame mismatch, bad index.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Invalid training/evaluation configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or similar numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Every voter of a landmark was cast out of bounds; the caller should fall
// back to the heat-map maximum.
class EmptyVoteError : public std::runtime_error {
 public:
  explicit EmptyVoteError(const std::string& what) : std::runtime_error(what) {}
};

#define CEPH_REQUIRE(cond, msg)                         \
  do {                                                  \
    if (!(cond)) throw ::ceph::ContractError(msg);      \
  } while (0)

}  // namespace ceph
