#ifndef MAGCAL_ERROR_HPP
#define MAGCAL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace magcal {

// Error categories mirrored by the C API status codes.
enum class ErrorCode {
    invalid_argument,
    parse,
    io,
    numeric,
    unobservable,
    state,
    internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void throw_error(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

} // namespace magcal

#endif
