#pragma once

// Shared scalar aliases and the error taxonomy used across the library.

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace difest {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Wide-precision types for the adversarial schedule machinery, where the
// information matrices become very ill-conditioned.
using LongScalar = long double;
using LongVector = Eigen::Matrix<LongScalar, Eigen::Dynamic, 1>;
using LongMatrix = Eigen::Matrix<LongScalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Malformed inputs: wrong shapes, negative weights, asymmetric matrices.
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// An operation's mathematical precondition does not hold.
struct PreconditionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A cross-field or semantic constraint is violated (config-level errors).
struct ConstraintError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Guard against computations that would not finish at desk scale.
struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A randomized existence search exhausted its attempt budget.
struct SearchFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Internal consistency violation: indicates a bug, not bad input.
struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace difest
