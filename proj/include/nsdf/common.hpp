#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nsdf {

using Vec3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

enum class ErrorCode {
    FileNotFound,
    ParseError,
    IndexOutOfRange,
    IoError,
    DegenerateMesh,
    ZeroArea,
    InvalidCount,
    InvalidArchitecture,
    DimensionMismatch,
    TooFewPoints,
    EmptySurfaceSet,
    ShapeMismatch,
    ConfigMismatch,
    NonFiniteLoss,
    InvalidResolution,
    NonFiniteValue,
    NotConvex,
    DuplicateIndex,
    InterpCountTooLarge,
    EmptySet,
    TooFewMeshes,
    UnknownKey,
    BadValue,
    BadMagic,
    UnsupportedVersion,
    TruncatedFile,
    ShapeInconsistency,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    /// The message without the leading error-code tag.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

/// Seeds a generator from a base seed plus stream identifiers, so that
/// independent streams (per epoch, per shape, ...) never overlap.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work items
/// must write disjoint outputs; results never depend on the thread count.
void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& body);

/// Number of workers to use when the caller passes 0 ("auto").
unsigned resolve_threads(unsigned requested);

/// Writes to a sibling temp file then renames over the destination.
void write_file_atomic(const std::string& path, std::string_view bytes);

std::string read_file(const std::string& path);

}  // namespace nsdf
