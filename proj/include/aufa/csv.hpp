#pragma once

#include <filesystem>
#include <string>

#include "aufa/matrix.hpp"

namespace aufa {

// Reads a header-less CSV of decimal numbers. Throws Error with kind
// MissingFile, RaggedRows or NonNumeric.
Matrix read_csv_matrix(const std::filesystem::path& path);

// Writes with the shortest decimal form that round-trips exactly.
void write_csv_matrix(const std::filesystem::path& path, const Matrix& m);

// Shortest round-trip decimal representation of v.
std::string format_double(double v);

}  // namespace aufa
