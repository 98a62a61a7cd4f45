#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace m3s {

struct Shape {
    int channels = 0;
    int height   = 0;
    int width    = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
    int plane() const { return height * width; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense channels x height x width tensor of doubles, channel-major.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::span<double> channel(int c);
    std::span<const double> channel(int c) const;

    bool all_finite() const;
    double max_abs() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    bool operator==(const Tensor&) const = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape shape_{};
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);

// Throws ValidationError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

// Bitwise comparison; distinguishes -0.0 from +0.0 and compares NaN payloads.
bool bitwise_equal(const Tensor& a, const Tensor& b);

Tensor transpose_spatial(const Tensor& t);

}  // namespace m3s
