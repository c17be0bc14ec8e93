// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace traceaudit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text did not match a grammar; `offset` is the byte position of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : Error(message + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A structured document (audit suite, model, corpus schema) has a bad field.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& field, const std::string& message)
      : Error(field + ": " + message), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class UnboundIdentifier : public Error {
 public:
  explicit UnboundIdentifier(const std::string& name)
      : Error("unbound identifier '" + name + "'"), name_(name) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class DivisionByZero : public Error {
 public:
  DivisionByZero() : Error("division by zero") {}
};

/// Input leaves a statistic or model undefined (all ties, too few tokens).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class TooFewItems : public Error {
 public:
  TooFewItems(std::size_t have, std::size_t need)
      : Error("need at least " + std::to_string(need) + " items, have " + std::to_string(have)) {}
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus is empty") {}
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TooManyMalformed : public Error {
 public:
  TooManyMalformed(std::size_t malformed, std::size_t total, double threshold)
      : Error(std::to_string(malformed) + " of " + std::to_string(total) +
              " lines malformed (threshold " + std::to_string(threshold) + ")") {}
};

}  // namespace traceaudit
