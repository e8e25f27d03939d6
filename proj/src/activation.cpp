#include "alignlab/activation.hpp"

#include <cmath>
#include <numbers>

#include "alignlab/error.hpp"

namespace alignlab {

double activate(Activation kind, double z) {
  switch (kind) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::erf: return std::erf(z);
    case Activation::identity: return z;
  }
  return z;
}

double activate_derivative(Activation kind, double z) {
  switch (kind) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::erf: return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-z * z);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

bool has_bounded_derivatives(Activation kind) {
  return kind == Activation::tanh || kind == Activation::erf || kind == Activation::identity;
}

Matrix activate(Activation kind, const Matrix& z) {
  if (kind == Activation::identity) return z;
  if (kind == Activation::relu) return z.cwiseMax(0.0);
  return z.unaryExpr([kind](double v) { return activate(kind, v); });
}

Matrix activate_derivative(Activation kind, const Matrix& z) {
  return z.unaryExpr([kind](double v) { return activate_derivative(kind, v); });
}

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::erf: return "erf";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "erf") return Activation::erf;
  if (name == "identity") return Activation::identity;
  throw Error(ErrorKind::invalid_config, "unknown activation '" + std::string(name) + "'");
}

}  // namespace alignlab
