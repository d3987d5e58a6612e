// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "moeffd/errors.hpp"

namespace moeffd {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { F32, F64 };

std::string dtype_name(DType d);
DType dtype_from_name(const std::string& name);
std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

/// Dense row-major tensor. The element type is fixed at compile time, so
/// mixing 32- and 64-bit operands is a type error rather than a runtime one.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
    static Tensor from(std::initializer_list<std::size_t> shape, std::initializer_list<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    static constexpr DType dtype() { return dtype_of<T>(); }

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& at(std::size_t c, std::size_t i, std::size_t j) { return data_[(c * shape_[1] + i) * shape_[2] + j]; }
    const T& at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    // Same data, new shape with the same element count.
    Tensor reshaped(Shape shape) const;
    void fill(T v);
    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(T s);

    bool all_finite() const;
    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<T> data_;
    bool grad_enabled_ = false;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Throws DimensionError mentioning `what` and both shapes.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

enum class ParamGroup : std::uint8_t { Gate, Other };

/// A named model tensor. Frozen parameters are never touched by an optimizer.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    bool frozen = false;
    ParamGroup group = ParamGroup::Other;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v, bool is_frozen, ParamGroup g = ParamGroup::Other)
        : name(std::move(n)), value(std::move(v)), frozen(is_frozen), group(g) {}
};

}  // namespace moeffd
