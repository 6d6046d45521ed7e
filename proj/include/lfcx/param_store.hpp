#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lfcx/autograd.hpp"

namespace lfcx {

// True when `name` is `prefix` itself or lies under it as a dotted path.
// The empty prefix matches everything.
bool under_prefix(std::string_view name, std::string_view prefix);

// Named trainable parameters plus non-trainable buffers (norm running stats).
// Parameters under a frozen prefix are created/kept with requires_grad=false,
// so no gradient ever reaches them and optimizers skip them.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  // Deep copy: values and frozen set, no gradients.
  ParamStore clone() const;

  Var& add(const std::string& name, Tensor init);
  Tensor& add_buffer(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  bool contains_buffer(const std::string& name) const { return buffers_.count(name) > 0; }
  const Var& param(const std::string& name) const;
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  const std::map<std::string, Var>& params() const { return params_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::vector<std::string> param_names(std::string_view prefix = "") const;

  // Element count of every parameter under `prefix` (buffers excluded).
  std::size_t count(std::string_view prefix = "") const;

  void freeze(const std::string& prefix);
  // Freeze every parameter not under `keep_prefix`.
  void freeze_all_except(const std::string& keep_prefix);
  void unfreeze_all();
  bool is_frozen(std::string_view name) const;
  const std::set<std::string>& frozen_prefixes() const { return frozen_; }

  void zero_grad();
  void remove(std::string_view prefix);

  // Overwrites the value of an existing parameter or buffer; shapes must match.
  void assign(const std::string& name, const Tensor& value);

  std::map<std::string, Tensor> snapshot() const;

 private:
  void refresh_requires_grad();

  std::map<std::string, Var> params_;
  std::map<std::string, Tensor> buffers_;
  std::set<std::string> frozen_;
};

std::size_t count_params(const ParamStore& store, const std::vector<std::string>& prefixes);

}  // namespace lfcx
