#pragma once

#include <stdexcept>
#include <string>

namespace oscbnd {

/// Raised for invalid input or when a numerical hypothesis does not hold.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The two eigenvalues converging to the limit value are not separated by
/// their boundary energies (the non-degeneracy hypothesis fails).
class NeravViolated : public Error {
public:
    explicit NeravViolated(const std::string& what) : Error("nerav violated: " + what) {}
};

class SolvabilityViolated : public Error {
public:
    SolvabilityViolated(double r1, double r2)
        : Error("solvability violated: residues " + std::to_string(r1) + ", " + std::to_string(r2)),
          residue1(r1), residue2(r2) {}
    double residue1;
    double residue2;
};

} // namespace oscbnd
