// hungarian.hpp: rectangular linear assignment (shortest augmenting path, O(n^2 m)).
#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace deft {

/// Cells at or below this value (when maximizing) are forbidden.
/// Mirrors -infinity in the association matrix while keeping arithmetic finite.
inline constexpr double kForbidden = -1e18;
inline constexpr double kForbiddenCutoff = -1e17;

struct AssignmentResult {
  std::vector<int> row_to_col;  // -1 when the row is unassigned
  std::vector<int> col_to_row;  // -1 when the column is unassigned
  double total = 0.0;           // sum of selected cells in row order

  std::vector<std::pair<int, int>> pairs() const;
};

/// Solves the assignment problem on `scores`. Every row (or column, whichever is
/// smaller) is assigned unless only forbidden cells remain for it; forbidden cells
/// never appear in the result. With `maximize` false, forbidden cells are those
/// >= -kForbiddenCutoff.
AssignmentResult hungarian(const Eigen::MatrixXd& scores, bool maximize);

}  // namespace deft
