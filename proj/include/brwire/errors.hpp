#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace brwire {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// A closed form was requested for a law that only has a sampler.
class UnsupportedLaw : public Error {
 public:
  using Error::Error;
};

class EmptySelection : public Error {
 public:
  using Error::Error;
};

class NotStabilized : public Error {
 public:
  using Error::Error;
};

class ResolutionTooCoarse : public Error {
 public:
  using Error::Error;
};

class InternalMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// The next generation would exceed the population cap. The replicate is
/// aborted; nothing is truncated.
class CapExceeded : public Error {
 public:
  CapExceeded(std::uint64_t replicate, int generation, std::size_t count, std::size_t cap)
      : Error("replicate " + std::to_string(replicate) + ": generation " +
              std::to_string(generation) + " would hold " + std::to_string(count) +
              " particles (cap " + std::to_string(cap) + ")"),
        replicate_(replicate),
        generation_(generation),
        count_(count) {}

  std::uint64_t replicate() const noexcept { return replicate_; }
  int generation() const noexcept { return generation_; }
  std::size_t count() const noexcept { return count_; }

  CapExceeded with_replicate(std::uint64_t replicate, std::size_t cap) const {
    return CapExceeded(replicate, generation_, count_, cap);
  }

 private:
  std::uint64_t replicate_;
  int generation_;
  std::size_t count_;
};

}  // namespace brwire
