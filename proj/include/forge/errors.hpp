#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace forge {

// Bad inputs: malformed configs, unreadable corpora, shape mismatches,
// out-of-range ids. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures: non-finite loss, fully masked softmax slices.
// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_into(os, rest...);
}
} // namespace detail

template <typename... Args>
std::string format_msg(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

} // namespace forge

#define FORGE_CHECK(cond, ...)                                        \
    do {                                                              \
        if (!(cond)) throw ::forge::DataError(::forge::format_msg(__VA_ARGS__)); \
    } while (0)
