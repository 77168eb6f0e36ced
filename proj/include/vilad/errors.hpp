#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vilad {

/// Grid or image with unusable dimensions.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input value outside its documented domain.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A social-cost query over an empty cell list.
class EmptyTrajectory : public std::invalid_argument {
 public:
  EmptyTrajectory() : std::invalid_argument("trajectory has no cells") {}
};

/// Malformed on-disk data. `offset` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Illegal transition of a state machine (stepping a finished episode, stopping an idle recorder).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The annotation oracle replied, but never with a usable answer.
class OracleError : public std::runtime_error {
 public:
  OracleError(const std::string& what, std::string raw_reply)
      : std::runtime_error(what), raw_reply_(std::move(raw_reply)) {}

  [[nodiscard]] const std::string& raw_reply() const noexcept { return raw_reply_; }

 private:
  std::string raw_reply_;
};

class SourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged. Carries the step and the record that produced the bad loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t step, std::string record_id)
      : std::runtime_error(what + " at step " + std::to_string(step) + " (record " + record_id + ")"),
        step_(step),
        record_id_(std::move(record_id)) {}

  [[nodiscard]] std::size_t step() const noexcept { return step_; }
  [[nodiscard]] const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::size_t step_;
  std::string record_id_;
};

}  // namespace vilad
