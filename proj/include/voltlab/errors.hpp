#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace voltlab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define VOLTLAB_ERROR(Name)                   \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    }

VOLTLAB_ERROR(RangeError);
VOLTLAB_ERROR(FormatError);
VOLTLAB_ERROR(SchemaError);
VOLTLAB_ERROR(InvariantError);
VOLTLAB_ERROR(UnknownCoreOrPState);
VOLTLAB_ERROR(InterpreterError);
VOLTLAB_ERROR(ParseError);
VOLTLAB_ERROR(UnknownStressor);
VOLTLAB_ERROR(InvalidCore);
VOLTLAB_ERROR(NoWindowFound);
VOLTLAB_ERROR(CalibrationError);
VOLTLAB_ERROR(AbortedByCrash);

#undef VOLTLAB_ERROR

/// Crash abort that still hands back what was gathered before the crash budget ran out.
template <typename Partial>
class AbortedWithPartial : public AbortedByCrash {
public:
    AbortedWithPartial(const std::string& what, Partial partial)
        : AbortedByCrash(what), partial_(std::move(partial)) {}

    const Partial& partial() const noexcept { return partial_; }

private:
    Partial partial_;
};

} // namespace voltlab
