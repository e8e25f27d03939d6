#pragma once

#include <string>
#include <string_view>

#include "alignlab/tensor.hpp"

namespace alignlab {

enum class Activation { relu, tanh, erf, identity };

double activate(Activation kind, double z);
/// First derivative. relu'(0) is 0.
double activate_derivative(Activation kind, double z);

/// True when the activation has bounded first and second derivatives,
/// the smoothness condition behind the infinite-width results. relu fails it.
bool has_bounded_derivatives(Activation kind);

Matrix activate(Activation kind, const Matrix& z);
Matrix activate_derivative(Activation kind, const Matrix& z);

std::string to_string(Activation kind);
Activation parse_activation(std::string_view name);

}  // namespace alignlab
