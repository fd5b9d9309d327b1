#pragma once

#include <stdexcept>
#include <string>

namespace shf {

// Invalid arguments or arguments outside an operation's domain.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// A numerical routine could not meet its requested accuracy.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The request is well posed but exceeds a configured resource guard.
class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

// An asserted mathematical property failed at run time.
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

template <class E = DomainError>
void require(bool ok, const std::string& what) {
    if (!ok) throw E(what);
}

} // namespace shf
