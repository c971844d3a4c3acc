#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace bnflow {

// Scalar nonlinearity applied after normalization. Derivative at 0 uses the
// left value (0 for ReLU, alpha for leaky ReLU).
struct Activation {
    enum class Kind { Identity, ReLU, LeakyReLU };

    Kind kind = Kind::LeakyReLU;
    double alpha = 0.01; // leaky slope, ignored otherwise

    static Activation identity() { return {Kind::Identity, 0.0}; }
    static Activation relu() { return {Kind::ReLU, 0.0}; }
    static Activation leaky_relu(double a) { return {Kind::LeakyReLU, a}; }

    double value(double w) const {
        switch (kind) {
        case Kind::Identity: return w;
        case Kind::ReLU: return w > 0.0 ? w : 0.0;
        case Kind::LeakyReLU: return w > 0.0 ? w : alpha * w;
        }
        return w;
    }

    double deriv(double w) const {
        switch (kind) {
        case Kind::Identity: return 1.0;
        case Kind::ReLU: return w > 0.0 ? 1.0 : 0.0;
        case Kind::LeakyReLU: return w > 0.0 ? 1.0 : alpha;
        }
        return 1.0;
    }

    double lipschitz() const {
        switch (kind) {
        case Kind::Identity: return 1.0;
        case Kind::ReLU: return 1.0;
        case Kind::LeakyReLU: return std::max(1.0, std::abs(alpha));
        }
        return 1.0;
    }

    double at_zero() const { return 0.0; } // all supported activations vanish at 0

    std::string name() const {
        switch (kind) {
        case Kind::Identity: return "identity";
        case Kind::ReLU: return "relu";
        case Kind::LeakyReLU: return "leaky_relu(" + std::to_string(alpha) + ")";
        }
        return "?";
    }

    static Activation parse(const std::string& id, double alpha = 0.01) {
        if (id == "identity") return identity();
        if (id == "relu") return relu();
        if (id == "leaky_relu") return leaky_relu(alpha);
        throw std::invalid_argument("unknown activation id: " + id);
    }
};

// Pointwise risk. Only the squared loss is provided; the derivative is taken
// in the first argument.
struct LossFn {
    enum class Kind { Squared };

    Kind kind = Kind::Squared;

    double value(double f, double y) const { return 0.5 * (f - y) * (f - y); }
    double deriv(double f, double y) const { return f - y; }
    double deriv_lipschitz() const { return 1.0; }
    double deriv_at_zero(double y) const { return std::abs(y); }

    static LossFn parse(const std::string& id) {
        if (id == "squared") return {};
        throw std::invalid_argument("unknown loss id: " + id);
    }
};

} // namespace bnflow
