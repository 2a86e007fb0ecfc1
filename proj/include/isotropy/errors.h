#pragma once

#include <stdexcept>
#include <string>

namespace isotropy {

// Root of every error the library throws. Each module derives its own
// named failures from this so callers can catch at whatever granularity
// they need.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or incomplete configuration, including missing secrets.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace isotropy
