#pragma once

#include <cmath>
#include <vector>

#include "glotok/nn.hpp"
#include "glotok/tensor.hpp"

namespace glotok {

// Adam without weight decay or learning-rate schedule.
template <class T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    std::uint64_t t = 0;

    void init(const std::vector<nn::Param<T>*>& ps) {
        m.clear();
        v.clear();
        for (const auto* p : ps) {
            m.emplace_back(p->value.shape());
            v.emplace_back(p->value.shape());
        }
        t = 0;
    }
};

template <class T>
void adam_step(const std::vector<nn::Param<T>*>& ps, AdamState<T>& st, double lr, double beta1, double beta2, double eps) {
    ++st.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T step = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T e = static_cast<T>(eps);
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto& p = *ps[k];
        T* m = st.m[k].data();
        T* v = st.v[k].data();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const T g = p.grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            p.value[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + e);
        }
    }
}

} // namespace glotok
