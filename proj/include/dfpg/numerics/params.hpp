#pragma once

#include <string>
#include <vector>

#include "dfpg/numerics/tensor.hpp"

namespace dfpg {

template <class T>
struct ParamRef {
  std::string name;
  BasicTensor<T>* tensor;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

/// Collects named references from any type exposing visit(fn(name, tensor&)).
template <class T, class Params>
ParamList<T> param_list(Params& params) {
  ParamList<T> out;
  params.visit([&](const std::string& name, BasicTensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

/// Same structure, every tensor zeroed. Used as a gradient buffer.
template <class Params>
Params zeros_like(const Params& params) {
  Params out = params;
  out.visit([](const std::string&, auto& t) { t.fill(0); });
  return out;
}

template <class Params>
void zero_fill(Params& params) {
  params.visit([](const std::string&, auto& t) { t.fill(0); });
}

}  // namespace dfpg
