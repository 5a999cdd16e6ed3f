#pragma once

#include <stdexcept>
#include <string>

namespace mep {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Error carrying a module-specific code enum alongside the message.
template <typename Code>
class CodedError : public Error {
public:
    CodedError(Code code, const std::string& message) : Error(message), code_(code) {}

    [[nodiscard]] Code code() const noexcept { return code_; }

private:
    Code code_;
};

}  // namespace mep
