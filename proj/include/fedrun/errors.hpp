#ifndef FEDRUN_ERRORS_HPP_
#define FEDRUN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace fedrun {

/// Base of every error the library raises. `kind()` names the error class
/// for diagnostics and CLI output.
class Error : public std::runtime_error {
public:
    Error(const char* kind, const std::string& what)
        : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}
    const char* kind() const noexcept { return kind_; }

private:
    const char* kind_;
};

#define FEDRUN_DEFINE_ERROR(Name)                                      \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(#Name, what) {} \
    }

FEDRUN_DEFINE_ERROR(DimensionError);
FEDRUN_DEFINE_ERROR(NumericError);
FEDRUN_DEFINE_ERROR(DomainError);
FEDRUN_DEFINE_ERROR(EmptyAggregationError);
FEDRUN_DEFINE_ERROR(ProtocolError);
FEDRUN_DEFINE_ERROR(EncodeError);
FEDRUN_DEFINE_ERROR(NeedMoreBytes);
FEDRUN_DEFINE_ERROR(ConfigError);
FEDRUN_DEFINE_ERROR(CheckpointError);
FEDRUN_DEFINE_ERROR(IoError);
FEDRUN_DEFINE_ERROR(StartupError);
FEDRUN_DEFINE_ERROR(ReportError);

#undef FEDRUN_DEFINE_ERROR

}  // namespace fedrun

#endif  // FEDRUN_ERRORS_HPP_
