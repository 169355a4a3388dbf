// Named parameter tensors with paired gradient buffers.  Names are
// dot-separated; the leading component(s) form the parameter group used for
// perturbation targeting ("embedding", "layer.0", "head", "mine_critic").

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cifm/tensor.hpp"

namespace cifm {

struct ParamStore {
  std::vector<std::string> names;  // insertion order; the only iteration order used
  std::unordered_map<std::string, Matrix> weights;
  std::unordered_map<std::string, Matrix> grads;

  Matrix& add(const std::string& name, int rows, int cols);
  Matrix& weight(const std::string& name);
  const Matrix& weight(const std::string& name) const;
  Matrix& grad(const std::string& name);
  bool has(const std::string& name) const { return weights.count(name) > 0; }
  void zero_grads();
  size_t total_entries() const;
};

// "layer.0.attn.wq" -> "layer.0"; "embedding.token" -> "embedding".
std::string group_of(const std::string& param_name);

// All parameter names in the store belonging to `group`, in insertion order.
std::vector<std::string> params_in_group(const ParamStore& store, const std::string& group);

// FNV over shapes and raw weight bytes of the named tensors, in given order.
uint64_t checksum_params(const ParamStore& store, const std::vector<std::string>& names);
uint64_t checksum_all(const ParamStore& store);

}  // namespace cifm
