#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aufa/gradcheck.hpp"

// Finite-difference checks over every primitive and over the full
// adaptation loss on a toy model (6 ROIs, 2 layers, 2 heads, batch of 4).
namespace aufa {

struct GradCheckCase {
  std::string name;
  diff::GradCheckReport report;
};

std::vector<GradCheckCase> primitive_gradchecks(std::uint64_t seed);

// Rows are made confident enough to pass the filter so that all three loss
// terms carry gradient.
GradCheckCase joint_loss_gradcheck(std::uint64_t seed);

std::vector<GradCheckCase> gradcheck_suite(const std::vector<std::uint64_t>& seeds);

}  // namespace aufa
