#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace rsteer::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Sparse affine expression over flat variable indices.
class LinExpr {
public:
  LinExpr() = default;
  explicit LinExpr(double constant) : constant_(constant) {}

  LinExpr& add(int var, double coeff) {
    if (coeff != 0.0) terms_.emplace_back(var, coeff);
    return *this;
  }
  LinExpr& add_constant(double c) {
    constant_ += c;
    return *this;
  }
  LinExpr& operator*=(double s) {
    for (auto& t : terms_) t.second *= s;
    constant_ *= s;
    return *this;
  }

  const std::vector<std::pair<int, double>>& terms() const { return terms_; }
  double constant() const { return constant_; }

  double eval(const VectorXd& x) const {
    double v = constant_;
    for (const auto& [i, c] : terms_) v += c * x[i];
    return v;
  }

private:
  std::vector<std::pair<int, double>> terms_;
  double constant_ = 0.0;
};

enum class ConeKind { NonNeg, SecondOrder, Psd };

struct Triplet {
  int row;
  int col;
  double value;
};

// One cone block: s = H x + g must lie in the cone. For Psd, s is the scaled
// lower-triangular vectorization (off-diagonal entries times sqrt(2)) of an
// n x n symmetric matrix.
struct ConeBlock {
  ConeKind kind;
  int dim;  // NonNeg: row count; SecondOrder: cone dimension; Psd: matrix side
  std::vector<Triplet> entries;
  VectorXd constant;
  std::string label;

  int rows() const {
    return kind == ConeKind::Psd ? dim * (dim + 1) / 2 : dim;
  }
};

// Named block of decision variables, optionally with a structural zero mask.
// Masked-out entries are not variables at all; reads of them yield exact 0.
struct VarBlock {
  std::string name;
  int rows = 0;
  int cols = 1;
  int offset = 0;
  int count = 0;
  std::vector<std::int32_t> flat;  // rows*cols entries, -1 where masked out
};

enum class SolveStatus {
  Optimal,
  Infeasible,
  Unbounded,
  NumericalFailure,
  IterationLimit
};

const char* to_string(SolveStatus s);

struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  VectorXd x;  // present iff status == Optimal
  double objective = 0.0;
  int iterations = 0;
  std::string message;
};

// Solver-agnostic conic program: named variable blocks, a convex quadratic
// objective, linear equalities and a list of cone blocks.
class ConicProgram {
public:
  // rows x cols block; mask (if given) is row-major rows*cols, nonzero = active.
  int add_block(const std::string& name, int rows, int cols = 1,
                const std::vector<std::uint8_t>& mask = {});

  int num_vars() const { return num_vars_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  const VarBlock& block(int id) const { return blocks_.at(id); }

  // Flat index of entry (r, c); -1 when structurally zero.
  int var(int block_id, int r, int c = 0) const;
  bool is_active(int block_id, int r, int c = 0) const {
    return var(block_id, r, c) >= 0;
  }

  // Objective accumulation: sum of coeff * x_i * x_j terms plus linear part.
  void obj_add_quad(int i, int j, double coeff);
  void obj_add_linear(int i, double coeff);
  void obj_add_constant(double c) { obj_constant_ += c; }
  double objective_value(const VectorXd& x) const;

  // expr == 0
  int add_equality(const LinExpr& expr, const std::string& label);
  // expr >= 0
  int add_nonneg(const LinExpr& expr, const std::string& label);
  // rows[0] >= || rows[1:] ||_2
  int add_soc(const std::vector<LinExpr>& rows, const std::string& label);
  // Symmetric matrix with given upper-triangle entries (i <= j) is PSD.
  int add_psd(int n, const std::vector<std::vector<LinExpr>>& upper,
              const std::string& label);
  // Appends an already-built cone block (indices must refer to this program).
  int add_cone_block(ConeBlock cb);

  // Extraction helpers for solutions.
  MatrixXd block_value(const VectorXd& x, int block_id) const;

  // Raw views used by backends and by verify().
  const std::vector<VarBlock>& blocks() const { return blocks_; }
  const std::vector<Triplet>& eq_entries() const { return eq_entries_; }
  const std::vector<double>& eq_rhs() const { return eq_rhs_; }
  const std::vector<std::string>& eq_labels() const { return eq_labels_; }
  int num_eq_rows() const { return static_cast<int>(eq_rhs_.size()); }
  const std::vector<ConeBlock>& cones() const { return cones_; }
  int num_cones() const { return static_cast<int>(cones_.size()); }
  int count_cones(ConeKind kind, const std::string& label_prefix = "") const;

  const std::map<std::pair<int, int>, double>& obj_quad() const {
    return obj_quad_;
  }
  const std::map<int, double>& obj_linear() const { return obj_linear_; }
  double obj_constant() const { return obj_constant_; }

private:
  std::vector<VarBlock> blocks_;
  int num_vars_ = 0;

  std::map<std::pair<int, int>, double> obj_quad_;  // key (i <= j)
  std::map<int, double> obj_linear_;
  double obj_constant_ = 0.0;

  std::vector<Triplet> eq_entries_;
  std::vector<double> eq_rhs_;
  std::vector<std::string> eq_labels_;

  std::vector<ConeBlock> cones_;
};

struct Violation {
  std::string label;
  double amount;
};

struct VerifyReport {
  double max_eq_residual = 0.0;
  double max_cone_violation = 0.0;
  double objective = 0.0;
  std::vector<Violation> violations;  // entries exceeding the reporting tol

  bool ok(double tol) const {
    return max_eq_residual <= tol && max_cone_violation <= tol;
  }
};

// Recomputes every constraint residual from the program data alone; never
// consults a backend.
VerifyReport verify(const ConicProgram& prog, const VectorXd& x,
                    double report_tol = 1e-7);

// Self-describing text dump (sparse triplets + cone list) for cross-checking
// against external tools.
void dump(const ConicProgram& prog, std::ostream& os);

// Equivalent program whose objective is linear: the quadratic part is moved
// into an epigraph second-order cone over an auxiliary scalar block "epi.t".
ConicProgram to_epigraph_form(const ConicProgram& prog);

}  // namespace rsteer::conic
