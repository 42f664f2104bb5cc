#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

namespace mct {

// Error hierarchy. Everything the library throws derives from mct::Error,
// so callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct ValueError : Error {
    using Error::Error;
};

// printf-style formatting into std::string (gcc 11 has no <format>).
inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

// Thread count for parallel sections: MCT_THREADS overrides, else
// hardware concurrency, never less than 1.
inline int thread_count() {
    if (const char* env = std::getenv("MCT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace mct
