#pragma once

#include <stdexcept>
#include <string>

namespace ieatforge {

// Base for everything the toolkit throws on purpose.
class ForgeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// clients
class TransportError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class MalformedContinuationError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class EmptyTextError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class UnknownSpeakerError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class UnreadableAudioError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class UnknownTaskError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// corpus
class MissingPathError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class SchemaViolationError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// ieat
class UnknownTemplateError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class TemplateValidationError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class PreconditionError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// dialogue
class InfeasiblePoolError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// instructions
class ExemptionError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class PoolTooSmallError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// trainkit
class InvalidSpecError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class InvalidPartitionError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class EmptySupervisionError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class NonFiniteLossError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class DimensionMismatchError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// evalkit
class WeightSumError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class MissingReferenceError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class AllItemsFailedError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

// pipeline / cli
class ConfigValidationError : public ForgeError {
public:
    using ForgeError::ForgeError;
};
class MissingUpstreamError : public ForgeError {
public:
    using ForgeError::ForgeError;
};

}  // namespace ieatforge
