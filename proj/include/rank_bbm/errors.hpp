#pragma once

/// @file errors.hpp
/// @brief Exception types shared by every rank_bbm module.

#include <stdexcept>
#include <string>

namespace rank_bbm {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define RANK_BBM_DEFINE_ERROR(Name)            \
    class Name : public Error {                \
    public:                                    \
        explicit Name(const std::string& what) \
            : Error(#Name ": " + what) {}      \
    }

// selection-kernel
RANK_BBM_DEFINE_ERROR(InvalidPsi);
RANK_BBM_DEFINE_ERROR(InvalidReaction);
RANK_BBM_DEFINE_ERROR(InvalidRate);
RANK_BBM_DEFINE_ERROR(UnknownPreset);

// particle-engine
RANK_BBM_DEFINE_ERROR(RankOutOfRange);
RANK_BBM_DEFINE_ERROR(InvalidConfig);
RANK_BBM_DEFINE_ERROR(RateBoundExceeded);
RANK_BBM_DEFINE_ERROR(AssumptionViolation);
RANK_BBM_DEFINE_ERROR(PopulationCap);

// pde-solver
RANK_BBM_DEFINE_ERROR(StabilityViolation);
RANK_BBM_DEFINE_ERROR(BlowUp);
RANK_BBM_DEFINE_ERROR(RangeViolation);
RANK_BBM_DEFINE_ERROR(DomainTooSmall);
RANK_BBM_DEFINE_ERROR(LevelNotAttained);

// wave-analysis
RANK_BBM_DEFINE_ERROR(NoConnection);
RANK_BBM_DEFINE_ERROR(Degenerate);

// experiment-harness
RANK_BBM_DEFINE_ERROR(NoGapFound);

// cli
RANK_BBM_DEFINE_ERROR(ParseError);
RANK_BBM_DEFINE_ERROR(ValidationError);
RANK_BBM_DEFINE_ERROR(IoError);

#undef RANK_BBM_DEFINE_ERROR

} // namespace rank_bbm
