#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace auxmtl {

// Dimension sizes, outermost first. Rank 0 denotes a scalar.
using Shape = std::vector<std::int64_t>;

std::int64_t shape_product(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 buffer. Plain value type; the autodiff graph owns
// the op structure, a Tensor is just shape + data.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> d);

    static Tensor scalar(double v);
    static Tensor zeros_like(const Tensor& t);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Only valid for size()==1 tensors.
    double item() const;

    bool all_finite() const;
};

}  // namespace auxmtl
