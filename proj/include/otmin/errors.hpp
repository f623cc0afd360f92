#pragma once

#include <stdexcept>
#include <string>

namespace otmin {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// measure
struct AllZeroDensity : Error { using Error::Error; };
struct NegativeDensity : Error { using Error::Error; };

// transport
struct InfeasibleMarginals : Error { using Error::Error; };
struct SizeGuardExceeded : Error { using Error::Error; };
struct NumericalUnderflow : Error { using Error::Error; };

struct NoConvergence : Error {
    NoConvergence(const std::string& what, double marginal_error)
        : Error(what), last_marginal_error(marginal_error) {}
    double last_marginal_error;
};

// functionals
struct InvalidKernel : Error { using Error::Error; };
struct InvalidLocalFunctional : Error { using Error::Error; };

// solver
struct BarrierBreach : Error { using Error::Error; };

// analytic
struct SupportTouchesBoundary : Error { using Error::Error; };

// cli
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace otmin
