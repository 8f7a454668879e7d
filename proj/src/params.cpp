#include "aufa/params.hpp"

#include <cmath>

#include "aufa/error.hpp"

namespace aufa {

diff::Parameter& ParamStore::add(std::string name, Matrix init) {
  if (index_.count(name)) throw Error(ErrorKind::InvalidArgument, "duplicate parameter '" + name + "'");
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(init));
  return items_.back();
}

diff::Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "unknown parameter '" + name + "'");
  return items_[it->second];
}

const diff::Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "unknown parameter '" + name + "'");
  return items_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : items_) p.zero_grad();
}

std::vector<diff::Parameter*> ParamStore::pointers() {
  std::vector<diff::Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(&p);
  return out;
}

Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = dist(rng);
  return m;
}

}  // namespace aufa
