#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pixeldit/autograd.hpp"

namespace pixeldit {

// Owns named parameters. Addresses are stable for the lifetime of the set, so
// blocks hold plain pointers into it. Iteration order is insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

}  // namespace pixeldit
