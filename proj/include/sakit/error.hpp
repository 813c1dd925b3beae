#pragma once

#include <stdexcept>
#include <string>

namespace sakit {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or channel mismatch detected while building or running a graph.
// `node()` names the offending node when one is known.
class ShapeError : public Error {
 public:
  ShapeError(std::string node, const std::string& what)
      : Error(node.empty() ? what : "node '" + node + "': " + what),
        node_(std::move(node)) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

// Malformed text input. line() is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sakit
