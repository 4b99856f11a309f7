#pragma once

namespace alda {

// Digamma function psi(x) = d/dx log Gamma(x) for x > 0. Shifts small
// arguments up with psi(x) = psi(x + 1) - 1/x and evaluates the asymptotic
// series once x >= 10.
double digamma(double x);

}  // namespace alda
