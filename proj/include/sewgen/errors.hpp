#pragma once

#include <stdexcept>
#include <string>

namespace sewgen {

// Base for every library error. Subtypes mirror the failure modes the
// codec, stitch matcher, model and IO layers can report.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyDatasetError : Error {
    using Error::Error;
};
struct PanelTooLargeError : Error {
    using Error::Error;
};
struct SequenceTooLongError : Error {
    using Error::Error;
};
struct MalformedSequenceError : Error {
    using Error::Error;
};
struct TokenOutOfRangeError : Error {
    using Error::Error;
};
struct InvalidStitchGraphError : Error {
    using Error::Error;
};
struct UnknownCaptionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

// Checkpoint container failures.
struct NotACheckpointError : Error {
    using Error::Error;
};
struct UnsupportedVersionError : Error {
    using Error::Error;
};
struct CorruptCheckpointError : Error {
    using Error::Error;
};

} // namespace sewgen
