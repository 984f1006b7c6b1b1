#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace transid {

/// Dense row-major array of doubles.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
    Tensor(std::initializer_list<std::size_t> dims, double fill = 0.0)
        : Tensor(std::vector<std::size_t>(dims), fill)
    {
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double* data() { return values.data(); }
    const double* data() const { return values.data(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    /// Throws ShapeError when the value count differs from the shape product.
    void check_shape() const;
    /// Throws NonFiniteError on NaN or Inf; `where` names the layer boundary.
    void check_finite(const std::string& where) const;

    void fill(double v);
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

} // namespace transid
