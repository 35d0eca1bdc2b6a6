// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace laser {

// Error categories map onto CLI exit codes: validation-like errors exit 1,
// I/O errors exit 2 and protocol errors exit 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class SizeError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class MetricError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

// Raised by a decoding backend; carries which stream ('+' or '-') failed.
class BackendError : public Error {
public:
    BackendError(char stream, const std::string& what)
        : Error(std::string("stream ") + stream + ": " + what), stream_(stream) {}
    char stream() const noexcept { return stream_; }

private:
    char stream_;
};

}  // namespace laser
