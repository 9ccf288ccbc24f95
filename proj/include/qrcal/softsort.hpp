#pragma once

#include <span>
#include <vector>

#include "qrcal/ndgrad.hpp"

namespace qrcal {

enum class SortOrder { kAscending, kDescending };

struct SoftSortConfig {
  /// Relaxation temperature; smaller is closer to a hard sort.
  double tau = 0.1;
  SortOrder order = SortOrder::kAscending;
};

/// Row-stochastic relaxation of the sorting permutation of `s` (a vector of
/// length n). Row i of the descending relaxation is
///   softmax(((n + 1 - 2i) s - A 1) / tau),  A[j,k] = |s_j - s_k|,
/// and the ascending one reverses the row index.
ad::Var soft_permutation(ad::Var s, const SoftSortConfig& cfg);

/// soft_permutation(s) * s as a vector of length n.
ad::Var soft_sorted(ad::Var s, const SoftSortConfig& cfg);

/// Convenience evaluation on plain values (no gradient).
std::vector<double> soft_sort_values(std::span<const double> s, const SoftSortConfig& cfg);

}  // namespace qrcal
