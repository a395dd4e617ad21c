#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gnas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; the message lists both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied argument is outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Dataset file could not be parsed.
class IngestionError : public Error {
 public:
  IngestionError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// An architecture description violates the action space; `slot` names the offending slot.
class ValidationError : public Error {
 public:
  ValidationError(std::string slot, const std::string& what)
      : Error(slot + ": " + what), slot_(std::move(slot)) {}
  const std::string& slot() const { return slot_; }

 private:
  std::string slot_;
};

// Child training produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// Internal consistency check failed. Indicates a bug, not bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace gnas
