#include "maskasr/common.hpp"

#include <atomic>
#include <cstdio>
#include <vector>

namespace maskasr {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::kOk: return "ok";
        case ErrorCode::kInvalidArg: return "invalid_arg";
        case ErrorCode::kConfig: return "config";
        case ErrorCode::kIo: return "io";
        case ErrorCode::kData: return "data";
        case ErrorCode::kShape: return "shape";
        case ErrorCode::kState: return "state";
        case ErrorCode::kUnknownLanguage: return "unknown_language";
        case ErrorCode::kInfeasibleTarget: return "infeasible_target";
        case ErrorCode::kDiverged: return "diverged";
        case ErrorCode::kInternal: return "internal";
    }
    return "internal";
}

static std::string vformat(const char* fmt, va_list ap) {
    va_list ap2;
    va_copy(ap2, ap);
    const int n = std::vsnprintf(nullptr, 0, fmt, ap2);
    va_end(ap2);
    if (n <= 0) return std::string(fmt);
    std::vector<char> buf(static_cast<size_t>(n) + 1);
    std::vsnprintf(buf.data(), buf.size(), fmt, ap);
    return std::string(buf.data(), static_cast<size_t>(n));
}

void fail(ErrorCode code, const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    std::string msg = vformat(fmt, ap);
    va_end(ap);
    throw Error(code, msg);
}

static std::atomic<int> g_verbosity{1};

void set_verbosity(int level) { g_verbosity.store(level); }
int verbosity() { return g_verbosity.load(); }

void log_info(const char* fmt, ...) {
    if (verbosity() < 1) return;
    va_list ap;
    va_start(ap, fmt);
    std::string msg = vformat(fmt, ap);
    va_end(ap);
    std::fprintf(stderr, "%s\n", msg.c_str());
}

void log_warn(const char* fmt, ...) {
    if (verbosity() < 1) return;
    va_list ap;
    va_start(ap, fmt);
    std::string msg = vformat(fmt, ap);
    va_end(ap);
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
}

}  // namespace maskasr
