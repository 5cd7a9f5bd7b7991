#pragma once

#include <stdexcept>
#include <string>

namespace gsvton {

/// Base of every error the engine raises. `kind()` is a stable machine tag
/// used in CLI JSON error reports.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define GSVTON_DEFINE_ERROR(Name, tag)                                    \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(tag, what) {}      \
    }

GSVTON_DEFINE_ERROR(InvalidParameter, "invalid-parameter");
GSVTON_DEFINE_ERROR(DegenerateCovariance, "degenerate-covariance");
GSVTON_DEFINE_ERROR(DimensionMismatch, "dimension-mismatch");
GSVTON_DEFINE_ERROR(PreconditionError, "precondition");
GSVTON_DEFINE_ERROR(ImmutabilityError, "immutability");
GSVTON_DEFINE_ERROR(DuplicateIndex, "duplicate-index");
GSVTON_DEFINE_ERROR(ManifestError, "malformed-manifest");
GSVTON_DEFINE_ERROR(MissingFile, "missing-file");
GSVTON_DEFINE_ERROR(MissingAux, "missing-aux");
GSVTON_DEFINE_ERROR(EditorUnavailable, "editor-unavailable");
GSVTON_DEFINE_ERROR(IoError, "io");

#undef GSVTON_DEFINE_ERROR

} // namespace gsvton
