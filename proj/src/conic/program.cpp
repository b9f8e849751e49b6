#include "rsteer/conic/program.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace rsteer::conic {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::NumericalFailure: return "numerical_failure";
    case SolveStatus::IterationLimit: return "iteration_limit";
  }
  return "unknown";
}

int ConicProgram::add_block(const std::string& name, int rows, int cols,
                            const std::vector<std::uint8_t>& mask) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("block must have positive dimensions");
  if (!mask.empty() && mask.size() != static_cast<size_t>(rows) * cols)
    throw std::invalid_argument("mask size must be rows*cols");
  VarBlock b;
  b.name = name;
  b.rows = rows;
  b.cols = cols;
  b.offset = num_vars_;
  b.flat.assign(static_cast<size_t>(rows) * cols, -1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const size_t idx = static_cast<size_t>(r) * cols + c;
      if (mask.empty() || mask[idx]) b.flat[idx] = num_vars_ + b.count++;
    }
  num_vars_ += b.count;
  blocks_.push_back(std::move(b));
  return static_cast<int>(blocks_.size()) - 1;
}

int ConicProgram::var(int block_id, int r, int c) const {
  const VarBlock& b = blocks_.at(block_id);
  if (r < 0 || r >= b.rows || c < 0 || c >= b.cols)
    throw std::out_of_range("variable index outside block");
  return b.flat[static_cast<size_t>(r) * b.cols + c];
}

void ConicProgram::obj_add_quad(int i, int j, double coeff) {
  if (i < 0 || j < 0 || i >= num_vars_ || j >= num_vars_)
    throw std::out_of_range("objective variable out of range");
  if (coeff == 0.0) return;
  obj_quad_[{std::min(i, j), std::max(i, j)}] += coeff;
}

void ConicProgram::obj_add_linear(int i, double coeff) {
  if (i < 0 || i >= num_vars_)
    throw std::out_of_range("objective variable out of range");
  if (coeff != 0.0) obj_linear_[i] += coeff;
}

double ConicProgram::objective_value(const VectorXd& x) const {
  double v = obj_constant_;
  for (const auto& [ij, c] : obj_quad_) v += c * x[ij.first] * x[ij.second];
  for (const auto& [i, c] : obj_linear_) v += c * x[i];
  return v;
}

int ConicProgram::add_equality(const LinExpr& expr, const std::string& label) {
  const int row = num_eq_rows();
  for (const auto& [i, c] : expr.terms())
    eq_entries_.push_back({row, i, c});
  eq_rhs_.push_back(-expr.constant());
  eq_labels_.push_back(label);
  return row;
}

int ConicProgram::add_nonneg(const LinExpr& expr, const std::string& label) {
  ConeBlock cb;
  cb.kind = ConeKind::NonNeg;
  cb.dim = 1;
  for (const auto& [i, c] : expr.terms()) cb.entries.push_back({0, i, c});
  cb.constant = VectorXd::Constant(1, expr.constant());
  cb.label = label;
  cones_.push_back(std::move(cb));
  return num_cones() - 1;
}

int ConicProgram::add_soc(const std::vector<LinExpr>& rows,
                          const std::string& label) {
  if (rows.size() < 2)
    throw std::invalid_argument("second-order cone needs dimension >= 2");
  ConeBlock cb;
  cb.kind = ConeKind::SecondOrder;
  cb.dim = static_cast<int>(rows.size());
  cb.constant = VectorXd::Zero(cb.dim);
  for (int r = 0; r < cb.dim; ++r) {
    for (const auto& [i, c] : rows[r].terms()) cb.entries.push_back({r, i, c});
    cb.constant[r] = rows[r].constant();
  }
  cb.label = label;
  cones_.push_back(std::move(cb));
  return num_cones() - 1;
}

int ConicProgram::add_psd(int n,
                          const std::vector<std::vector<LinExpr>>& upper,
                          const std::string& label) {
  if (n < 1 || upper.size() != static_cast<size_t>(n))
    throw std::invalid_argument("psd block entries must be n rows");
  ConeBlock cb;
  cb.kind = ConeKind::Psd;
  cb.dim = n;
  cb.constant = VectorXd::Zero(cb.rows());
  // svec index of (i, j), i >= j, in column-major lower-triangle order.
  auto svec_index = [n](int i, int j) {
    return j * n - j * (j - 1) / 2 + (i - j);
  };
  const double rt2 = std::sqrt(2.0);
  for (int j = 0; j < n; ++j) {
    if (upper[j].size() != static_cast<size_t>(n - j))
      throw std::invalid_argument("psd row j must list entries (j, j..n-1)");
    for (int i = j; i < n; ++i) {
      const LinExpr& e = upper[j][i - j];
      const double scale = (i == j) ? 1.0 : rt2;
      const int row = svec_index(i, j);
      for (const auto& [v, c] : e.terms())
        cb.entries.push_back({row, v, scale * c});
      cb.constant[row] = scale * e.constant();
    }
  }
  cb.label = label;
  cones_.push_back(std::move(cb));
  return num_cones() - 1;
}

int ConicProgram::add_cone_block(ConeBlock cb) {
  cones_.push_back(std::move(cb));
  return num_cones() - 1;
}

MatrixXd ConicProgram::block_value(const VectorXd& x, int block_id) const {
  const VarBlock& b = blocks_.at(block_id);
  MatrixXd m = MatrixXd::Zero(b.rows, b.cols);
  for (int r = 0; r < b.rows; ++r)
    for (int c = 0; c < b.cols; ++c) {
      const int f = b.flat[static_cast<size_t>(r) * b.cols + c];
      if (f >= 0) m(r, c) = x[f];
    }
  return m;
}

int ConicProgram::count_cones(ConeKind kind,
                              const std::string& label_prefix) const {
  int n = 0;
  for (const auto& cb : cones_)
    if (cb.kind == kind && cb.label.rfind(label_prefix, 0) == 0) ++n;
  return n;
}

namespace {

VectorXd cone_values(const ConeBlock& cb, const VectorXd& x) {
  VectorXd s = cb.constant;
  for (const auto& t : cb.entries) s[t.row] += t.value * x[t.col];
  return s;
}

// Violation of one cone block: 0 when s is in the cone.
double cone_violation(const ConeBlock& cb, const VectorXd& s) {
  switch (cb.kind) {
    case ConeKind::NonNeg:
      return std::max(0.0, -s.minCoeff());
    case ConeKind::SecondOrder:
      return std::max(0.0, s.tail(s.size() - 1).norm() - s[0]);
    case ConeKind::Psd: {
      const int n = cb.dim;
      MatrixXd S(n, n);
      const double inv_rt2 = 1.0 / std::sqrt(2.0);
      int idx = 0;
      for (int j = 0; j < n; ++j)
        for (int i = j; i < n; ++i, ++idx) {
          const double v = (i == j) ? s[idx] : s[idx] * inv_rt2;
          S(i, j) = v;
          S(j, i) = v;
        }
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S,
                                                  Eigen::EigenvaluesOnly);
      return std::max(0.0, -eig.eigenvalues().minCoeff());
    }
  }
  return 0.0;
}

}  // namespace

VerifyReport verify(const ConicProgram& prog, const VectorXd& x,
                    double report_tol) {
  if (x.size() != prog.num_vars())
    throw std::invalid_argument("point has wrong dimension");
  VerifyReport rep;
  rep.objective = prog.objective_value(x);

  VectorXd eq = VectorXd::Zero(prog.num_eq_rows());
  for (const auto& t : prog.eq_entries()) eq[t.row] += t.value * x[t.col];
  for (int r = 0; r < prog.num_eq_rows(); ++r) {
    const double resid = std::abs(eq[r] - prog.eq_rhs()[r]);
    rep.max_eq_residual = std::max(rep.max_eq_residual, resid);
    if (resid > report_tol)
      rep.violations.push_back({prog.eq_labels()[r], resid});
  }
  for (const auto& cb : prog.cones()) {
    const double v = cone_violation(cb, cone_values(cb, x));
    rep.max_cone_violation = std::max(rep.max_cone_violation, v);
    if (v > report_tol) rep.violations.push_back({cb.label, v});
  }
  return rep;
}

void dump(const ConicProgram& prog, std::ostream& os) {
  os << "conic_program vars " << prog.num_vars() << "\n";
  for (const auto& b : prog.blocks())
    os << "block " << b.name << " " << b.rows << " " << b.cols << " offset "
       << b.offset << " count " << b.count << "\n";
  os << "objective_quad " << prog.obj_quad().size() << "\n";
  for (const auto& [ij, c] : prog.obj_quad())
    os << ij.first << " " << ij.second << " " << c << "\n";
  os << "objective_linear " << prog.obj_linear().size() << "\n";
  for (const auto& [i, c] : prog.obj_linear()) os << i << " " << c << "\n";
  os << "objective_constant " << prog.obj_constant() << "\n";
  os << "equalities " << prog.num_eq_rows() << " entries "
     << prog.eq_entries().size() << "\n";
  for (const auto& t : prog.eq_entries())
    os << t.row << " " << t.col << " " << t.value << "\n";
  os << "rhs";
  for (double b : prog.eq_rhs()) os << " " << b;
  os << "\ncones " << prog.num_cones() << "\n";
  for (const auto& cb : prog.cones()) {
    const char* kind = cb.kind == ConeKind::NonNeg       ? "nonneg"
                       : cb.kind == ConeKind::SecondOrder ? "soc"
                                                          : "psd";
    os << "cone " << kind << " dim " << cb.dim << " label " << cb.label
       << " entries " << cb.entries.size() << "\n";
    for (const auto& t : cb.entries)
      os << t.row << " " << t.col << " " << t.value << "\n";
    os << "constant";
    for (int i = 0; i < cb.constant.size(); ++i) os << " " << cb.constant[i];
    os << "\n";
  }
}

ConicProgram to_epigraph_form(const ConicProgram& prog) {
  ConicProgram out = prog;
  if (prog.obj_quad().empty()) return out;
  // t >= x^T Q x via || [2 R x; t - 1] || <= t + 1 with Q = R^T R.
  // Assemble Q densely over the touched variables only.
  std::vector<int> touched;
  std::map<int, int> pos;
  for (const auto& [ij, c] : prog.obj_quad()) {
    for (int v : {ij.first, ij.second})
      if (!pos.count(v)) {
        pos[v] = static_cast<int>(touched.size());
        touched.push_back(v);
      }
  }
  const int nq = static_cast<int>(touched.size());
  MatrixXd Q = MatrixXd::Zero(nq, nq);
  for (const auto& [ij, c] : prog.obj_quad()) {
    const int a = pos[ij.first], b = pos[ij.second];
    if (a == b)
      Q(a, a) += c;
    else {
      Q(a, b) += 0.5 * c;
      Q(b, a) += 0.5 * c;
    }
  }
  Eigen::LLT<MatrixXd> llt(Q);
  MatrixXd R;
  if (llt.info() == Eigen::Success) {
    R = MatrixXd(llt.matrixU());
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Q);
    if (eig.eigenvalues().minCoeff() < -1e-10)
      throw std::invalid_argument("objective Hessian is not PSD");
    R = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        eig.eigenvectors().transpose();
  }

  // Rebuild: same program, quadratic replaced by linear t.
  ConicProgram fresh;
  for (const auto& b : prog.blocks()) {
    std::vector<std::uint8_t> mask;
    if (b.count != b.rows * b.cols) {
      mask.resize(static_cast<size_t>(b.rows) * b.cols);
      for (size_t i = 0; i < mask.size(); ++i) mask[i] = b.flat[i] >= 0;
    }
    fresh.add_block(b.name, b.rows, b.cols, mask);
  }
  const int t_block = fresh.add_block("epi.t", 1, 1);
  const int t = fresh.var(t_block, 0, 0);
  for (const auto& [i, c] : prog.obj_linear()) fresh.obj_add_linear(i, c);
  fresh.obj_add_constant(prog.obj_constant());
  fresh.obj_add_linear(t, 1.0);
  for (size_t r = 0; r < prog.eq_rhs().size(); ++r) {
    LinExpr e(-prog.eq_rhs()[r]);
    for (const auto& tr : prog.eq_entries())
      if (tr.row == static_cast<int>(r)) e.add(tr.col, tr.value);
    fresh.add_equality(e, prog.eq_labels()[r]);
  }
  // Variable indices are unchanged by construction.
  for (const auto& cb : prog.cones()) fresh.add_cone_block(cb);

  std::vector<LinExpr> soc(static_cast<size_t>(nq) + 2);
  soc[0] = LinExpr(1.0);
  soc[0].add(t, 1.0);
  for (int r = 0; r < nq; ++r) {
    LinExpr row;
    for (int c = 0; c < nq; ++c)
      if (R(r, c) != 0.0) row.add(touched[c], 2.0 * R(r, c));
    soc[static_cast<size_t>(r) + 1] = row;
  }
  soc[static_cast<size_t>(nq) + 1] = LinExpr(-1.0);
  soc[static_cast<size_t>(nq) + 1].add(t, 1.0);
  fresh.add_soc(soc, "epigraph");
  return fresh;
}

}  // namespace rsteer::conic
