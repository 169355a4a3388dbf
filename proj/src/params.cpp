#include "cifm/params.hpp"

#include "cifm/common.hpp"

namespace cifm {

Matrix& ParamStore::add(const std::string& name, int rows, int cols) {
  if (has(name)) throw ConsistencyError("parameter '" + name + "' already exists");
  names.push_back(name);
  Matrix g(rows, cols);
  g.zero();
  grads.emplace(name, std::move(g));
  auto [it, ok] = weights.emplace(name, Matrix(rows, cols));
  (void)ok;
  return it->second;
}

Matrix& ParamStore::weight(const std::string& name) {
  auto it = weights.find(name);
  if (it == weights.end()) throw ConsistencyError("unknown parameter '" + name + "'");
  return it->second;
}

const Matrix& ParamStore::weight(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw ConsistencyError("unknown parameter '" + name + "'");
  return it->second;
}

Matrix& ParamStore::grad(const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) throw ConsistencyError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, g] : grads) g.zero();
}

size_t ParamStore::total_entries() const {
  size_t n = 0;
  for (const auto& [name, w] : weights) n += w.a.size();
  return n;
}

std::string group_of(const std::string& param_name) {
  const size_t dot = param_name.find('.');
  if (dot == std::string::npos) return param_name;
  if (param_name.compare(0, dot, "layer") == 0) {
    const size_t dot2 = param_name.find('.', dot + 1);
    return dot2 == std::string::npos ? param_name : param_name.substr(0, dot2);
  }
  return param_name.substr(0, dot);
}

std::vector<std::string> params_in_group(const ParamStore& store, const std::string& group) {
  std::vector<std::string> out;
  for (const std::string& name : store.names)
    if (group_of(name) == group) out.push_back(name);
  return out;
}

uint64_t checksum_params(const ParamStore& store, const std::vector<std::string>& names) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& name : names) {
    const Matrix& w = store.weight(name);
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(&w.rows, sizeof(w.rows), h);
    h = fnv1a(&w.cols, sizeof(w.cols), h);
    h = fnv1a(w.a.data(), w.a.size() * sizeof(double), h);
  }
  return h;
}

uint64_t checksum_all(const ParamStore& store) { return checksum_params(store, store.names); }

}  // namespace cifm
