#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tandem/autodiff.hpp"

namespace tandem {

struct NamedParam {
  std::string name;
  ad::Var var;
};
using ParamList = std::vector<NamedParam>;

// Non-trainable state that still belongs in a checkpoint (batchnorm stats).
using BufferList = std::vector<std::pair<std::string, Tensor*>>;

inline std::vector<ad::Var> vars_of(const ParamList& params) {
  std::vector<ad::Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

}  // namespace tandem
