#pragma once

#include <stdexcept>
#include <string>

namespace glotok {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ValueError : public Error {
public:
    using Error::Error;
};

// Malformed, truncated or wrong-magic files.
class FormatError : public Error {
public:
    using Error::Error;
};

// A loss term or gradient became NaN/Inf during training.
class NonFiniteError : public Error {
public:
    NonFiniteError(std::string term, const std::string& what)
        : Error(what), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

} // namespace glotok
