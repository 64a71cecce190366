#pragma once

#include <string>
#include <vector>

#include "sjepa/tensor.hpp"

namespace sjepa {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered list of named parameter tensors. Order is part of the checkpoint
/// layout and of the optimizer state, so builders must emit it deterministically.
using ParamSet = std::vector<NamedTensor>;

inline ParamSet with_prefix(const std::string& prefix, ParamSet params) {
    for (auto& p : params) {
        p.name = prefix + p.name;
    }
    return params;
}

inline void append(ParamSet& into, ParamSet more) {
    for (auto& p : more) {
        into.push_back(std::move(p));
    }
}

inline void zero_grads(ParamSet& params) {
    for (auto& p : params) {
        p.tensor.zero_grad();
    }
}

inline std::size_t param_count(const ParamSet& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.tensor.numel();
    }
    return n;
}

}  // namespace sjepa
