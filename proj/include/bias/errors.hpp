#pragma once

#include <stdexcept>
#include <string>

namespace bias {

/// Root of every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct DeterminismError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };

// checkpoint loading
struct VersionError : Error { using Error::Error; };
struct CompatibilityError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

// pipeline
struct OrderingError : Error { using Error::Error; };
struct StratificationError : Error { using Error::Error; };

struct UndefinedMetricError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };

}  // namespace bias
