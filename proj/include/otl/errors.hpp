#pragma once

#include <stdexcept>
#include <string>

namespace otl {

// Root of every error the library raises. Each subclass names a failure
// category so callers (and the CLI exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define OTL_DEFINE_ERROR(Name, Base)      \
    class Name : public Base {            \
    public:                               \
        using Base::Base;                 \
    }

// nn_engine
OTL_DEFINE_ERROR(ShapeError, Error);
OTL_DEFINE_ERROR(LabelError, Error);
OTL_DEFINE_ERROR(StateError, Error);
OTL_DEFINE_ERROR(KeyError, Error);
OTL_DEFINE_ERROR(NumericError, Error);
OTL_DEFINE_ERROR(FormatError, Error);
OTL_DEFINE_ERROR(VersionError, FormatError);
OTL_DEFINE_ERROR(CorruptionError, FormatError);
OTL_DEFINE_ERROR(ConfigError, Error);

// dataset
OTL_DEFINE_ERROR(SpecError, ConfigError);
OTL_DEFINE_ERROR(SplitError, Error);

// occlusion
OTL_DEFINE_ERROR(PlacementError, Error);
OTL_DEFINE_ERROR(PreconditionError, Error);
OTL_DEFINE_ERROR(AggregationError, Error);
OTL_DEFINE_ERROR(ParameterError, Error);
OTL_DEFINE_ERROR(AugmentationError, Error);

// metric_losses
OTL_DEFINE_ERROR(NormalizationError, Error);
OTL_DEFINE_ERROR(DimensionError, Error);
OTL_DEFINE_ERROR(BatchSizeError, Error);
OTL_DEFINE_ERROR(CompositionError, Error);
OTL_DEFINE_ERROR(DecidabilityError, Error);

// eval
OTL_DEFINE_ERROR(ProtocolError, Error);

#undef OTL_DEFINE_ERROR

}  // namespace otl
