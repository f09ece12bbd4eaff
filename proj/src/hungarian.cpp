#include "deft/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deft {

std::vector<std::pair<int, int>> AssignmentResult::pairs() const {
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < static_cast<int>(row_to_col.size()); ++r) {
    if (row_to_col[r] >= 0) out.emplace_back(r, row_to_col[r]);
  }
  return out;
}

namespace {

// Minimizes cost over an n x m matrix with n <= m; every row gets a column.
// Classic potentials formulation, 1-based internally.
std::vector<int> solve_min(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

AssignmentResult hungarian(const Eigen::MatrixXd& scores, bool maximize) {
  const int rows = static_cast<int>(scores.rows());
  const int cols = static_cast<int>(scores.cols());
  AssignmentResult result;
  result.row_to_col.assign(rows, -1);
  result.col_to_row.assign(cols, -1);
  if (rows == 0 || cols == 0) return result;

  auto forbidden = [&](double s) {
    return maximize ? s <= kForbiddenCutoff : s >= -kForbiddenCutoff;
  };

  // Forbidden cells get a penalty exceeding the spread of any feasible total, so the
  // solver first minimizes how many forbidden cells it uses, then the real cost.
  double max_abs = 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!forbidden(scores(r, c))) max_abs = std::max(max_abs, std::abs(scores(r, c)));
    }
  }
  const double penalty = 2.0 * (max_abs + 1.0) * (std::min(rows, cols) + 1);

  const bool transpose = rows > cols;
  const int n = transpose ? cols : rows;
  const int m = transpose ? rows : cols;
  Eigen::MatrixXd cost(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double s = transpose ? scores(j, i) : scores(i, j);
      cost(i, j) = forbidden(s) ? penalty : (maximize ? -s : s);
    }
  }

  const auto sol = solve_min(cost);
  for (int i = 0; i < n; ++i) {
    const int j = sol[i];
    const int r = transpose ? j : i;
    const int c = transpose ? i : j;
    if (j < 0 || forbidden(scores(r, c))) continue;
    result.row_to_col[r] = c;
    result.col_to_row[c] = r;
  }
  for (int r = 0; r < rows; ++r) {
    if (result.row_to_col[r] >= 0) result.total += scores(r, result.row_to_col[r]);
  }
  return result;
}

}  // namespace deft
