#pragma once

#include <cstdarg>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace maskasr {

// Error categories shared by the C++ core and the C API. The numeric values
// are part of the library ABI and double as CLI exit codes.
enum class ErrorCode : int {
    kOk = 0,
    kInvalidArg = 1,
    kConfig = 2,
    kIo = 3,
    kData = 4,
    kShape = 5,
    kState = 6,
    kUnknownLanguage = 7,
    kInfeasibleTarget = 8,
    kDiverged = 9,
    kInternal = 10,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const char* fmt, ...);

// 0 = silent, 1 = progress lines on stderr. Default 1.
void set_verbosity(int level);
int verbosity();

void log_info(const char* fmt, ...);
void log_warn(const char* fmt, ...);

// Fixed decimal formatting used by every CSV/manifest writer so that repeated
// runs produce byte-identical files.
std::string format_double(double v);

}  // namespace maskasr
