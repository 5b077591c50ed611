#pragma once

#include <stdexcept>
#include <string>

namespace grounding {

// Every error raised by the library carries a short machine-readable kind
// ("domain", "parse", "schema", ...) used by the CLI and the HTTP service.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message, std::string detail = {})
        : std::runtime_error(message), kind_(std::move(kind)), detail_(std::move(detail)) {}

    const std::string& kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string kind_;
    std::string detail_;
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& message) : Error("domain", message) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& message, std::string token, int position)
        : Error("parse", message, token), token_(std::move(token)), position_(position) {}

    const std::string& token() const noexcept { return token_; }
    int position() const noexcept { return position_; }

private:
    std::string token_;
    int position_;
};

// Malformed structured data: scene files, model files, LLM replies.
class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& message, std::string detail = {})
        : Error("schema", message, std::move(detail)) {}
};

class TransportError : public Error {
public:
    explicit TransportError(const std::string& message) : Error("transport", message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

// The product of the per-expression fields vanished everywhere.
class ContradictionError : public Error {
public:
    explicit ContradictionError(const std::string& message) : Error("contradiction", message) {}
};

class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& message) : Error("generation", message) {}
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& message) : Error("divergence", message) {}
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::string& message) : Error("not_found", message) {}
};

}  // namespace grounding
