#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "aufa/diff.hpp"
#include "aufa/rng.hpp"

namespace aufa {

// Ordered collection of uniquely named parameters. Addresses of stored
// parameters stay valid as more are added.
class ParamStore {
 public:
  diff::Parameter& add(std::string name, Matrix init);
  diff::Parameter& at(const std::string& name);
  const diff::Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  std::vector<diff::Parameter*> pointers();
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::deque<diff::Parameter> items_;
  std::map<std::string, std::size_t> index_;
};

// Uniform Glorot initialization in +-sqrt(6 / (rows + cols)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace aufa
