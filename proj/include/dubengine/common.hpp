#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dubengine {

// Error taxonomy maps onto CLI exit codes: config 2, data 3, numeric 4.
struct DubError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : DubError {
    using DubError::DubError;
};

struct DataError : DubError {
    using DubError::DubError;
};

struct NumericError : DubError {
    using DubError::DubError;
};

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline void check_data(bool ok, const std::string& msg) {
    if (!ok) throw DataError(msg);
}

}  // namespace dubengine
