#include "transid/tensor.hpp"

#include "transid/errors.hpp"

#include <algorithm>
#include <cmath>

namespace transid {

std::size_t shape_product(const std::vector<std::size_t>& shape)
{
    std::size_t n = 1;
    for (std::size_t d : shape)
        n *= d;
    return n;
}

std::string shape_string(const std::vector<std::size_t>& shape)
{
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(shape_product(shape), fill)
{
}

void Tensor::check_shape() const
{
    if (shape_product(shape) != values.size())
        throw ShapeError("tensor of shape " + shape_string(shape) + " holds " + std::to_string(values.size()) +
                         " values");
}

void Tensor::check_finite(const std::string& where) const
{
    for (double v : values)
        if (!std::isfinite(v))
            throw NonFiniteError("non-finite value at " + where);
}

void Tensor::fill(double v)
{
    std::fill(values.begin(), values.end(), v);
}

} // namespace transid
