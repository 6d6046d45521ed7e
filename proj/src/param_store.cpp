#include "lfcx/param_store.hpp"

#include "lfcx/errors.hpp"

namespace lfcx {

bool under_prefix(std::string_view name, std::string_view prefix) {
  if (prefix.empty()) return true;
  if (name.size() < prefix.size() || name.substr(0, prefix.size()) != prefix) return false;
  return name.size() == prefix.size() || name[prefix.size()] == '.' || prefix.back() == '.';
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, v] : params_) out.params_.emplace(name, Var(v.value(), v.requires_grad()));
  out.buffers_ = buffers_;
  out.frozen_ = frozen_;
  return out;
}

Var& ParamStore::add(const std::string& name, Tensor init) {
  if (params_.count(name) || buffers_.count(name))
    throw ContractError("duplicate parameter name '" + name + "'");
  auto [it, _] = params_.emplace(name, Var(std::move(init), !is_frozen(name)));
  return it->second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor init) {
  if (params_.count(name) || buffers_.count(name))
    throw ContractError("duplicate parameter name '" + name + "'");
  return buffers_.emplace(name, std::move(init)).first->second;
}

const Var& ParamStore::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ContractError("unknown buffer '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ContractError("unknown buffer '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::param_names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_)
    if (under_prefix(name, prefix)) out.push_back(name);
  return out;
}

std::size_t ParamStore::count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_)
    if (under_prefix(name, prefix)) n += v.value().numel();
  return n;
}

void ParamStore::freeze(const std::string& prefix) {
  frozen_.insert(prefix);
  refresh_requires_grad();
}

void ParamStore::freeze_all_except(const std::string& keep_prefix) {
  frozen_.clear();
  for (const auto& [name, _] : params_) {
    if (under_prefix(name, keep_prefix)) continue;
    frozen_.insert(name);
  }
  refresh_requires_grad();
}

void ParamStore::unfreeze_all() {
  frozen_.clear();
  refresh_requires_grad();
}

bool ParamStore::is_frozen(std::string_view name) const {
  for (const auto& p : frozen_)
    if (under_prefix(name, p)) return true;
  return false;
}

void ParamStore::refresh_requires_grad() {
  for (auto& [name, v] : params_) {
    const bool frozen = is_frozen(name);
    v.set_requires_grad(!frozen);
    if (frozen) v.zero_grad();
  }
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

void ParamStore::remove(std::string_view prefix) {
  std::erase_if(params_, [&](const auto& kv) { return under_prefix(kv.first, prefix); });
  std::erase_if(buffers_, [&](const auto& kv) { return under_prefix(kv.first, prefix); });
}

void ParamStore::assign(const std::string& name, const Tensor& value) {
  if (auto it = params_.find(name); it != params_.end()) {
    Var& v = it->second;
    if (v.shape() != value.shape())
      throw DimensionError("assign '" + name + "': shape " + shape_str(value.shape()) +
                           " does not match " + shape_str(v.shape()));
    v.mutable_value() = value;
    return;
  }
  Tensor& b = buffer(name);
  if (b.shape() != value.shape())
    throw DimensionError("assign '" + name + "': shape " + shape_str(value.shape()) +
                         " does not match " + shape_str(b.shape()));
  b = value;
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : params_) out.emplace(name, v.value());
  for (const auto& [name, b] : buffers_) out.emplace(name, b);
  return out;
}

std::size_t count_params(const ParamStore& store, const std::vector<std::string>& prefixes) {
  std::size_t n = 0;
  for (const auto& [name, v] : store.params()) {
    for (const auto& p : prefixes)
      if (under_prefix(name, p)) {
        n += v.value().numel();
        break;
      }
  }
  return n;
}

}  // namespace lfcx
