#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace robustmc {

// Base for every error the toolkit raises on purpose. `kind()` is the stable
// machine-readable tag the CLI prints.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

class FormatError : public Error {
 public:
  FormatError(std::size_t line, std::string field, const std::string& message)
      : Error("format_error", "line " + std::to_string(line) + ": " + field + ": " + message),
        line_(line),
        field_(std::move(field)) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class TemplateError : public Error {
 public:
  explicit TemplateError(const std::string& what) : Error("template_error", what) {}
};

class InsufficientSites : public Error {
 public:
  InsufficientSites(std::string kind, std::size_t required, std::size_t available)
      : Error("insufficient_sites", kind + ": need " + std::to_string(required) +
                                        " eligible sites, found " + std::to_string(available)),
        required_(required),
        available_(available) {}
  std::size_t required() const { return required_; }
  std::size_t available() const { return available_; }

 private:
  std::size_t required_;
  std::size_t available_;
};

class CompositionError : public Error {
 public:
  CompositionError(std::size_t step, const std::string& what)
      : Error("composition_error", "step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class ParaphraseError : public Error {
 public:
  ParaphraseError(std::string item_id, const std::string& what)
      : Error("paraphrase_error", "item " + item_id + ": " + what), item_id_(std::move(item_id)) {}
  const std::string& item_id() const { return item_id_; }

 private:
  std::string item_id_;
};

class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& what) : Error("capability_error", what) {}
};

class ProtocolError : public Error {
 public:
  ProtocolError(int status, const std::string& what)
      : Error("protocol_error", "status " + std::to_string(status) + ": " + what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error("transport_error", what) {}
};

class StatsError : public Error {
 public:
  explicit StatsError(const std::string& what) : Error("stats_error", what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage_error", what) {}
};

}  // namespace robustmc
