#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "rsteer/conic/solver.hpp"

namespace rsteer::conic {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

constexpr double kStep = 0.99;    // fraction-to-boundary damping
constexpr double kKktReg = 1e-8;  // static regularization of the scaled KKT

int svec_len(int n) { return n * (n + 1) / 2; }

MatrixXd unsvec(const Eigen::Ref<const VectorXd>& v, int n) {
  MatrixXd X(n, n);
  const double inv_rt2 = 1.0 / std::sqrt(2.0);
  int idx = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i, ++idx) {
      const double x = (i == j) ? v[idx] : v[idx] * inv_rt2;
      X(i, j) = x;
      X(j, i) = x;
    }
  return X;
}

void svec_into(const MatrixXd& X, Eigen::Ref<VectorXd> out) {
  const int n = static_cast<int>(X.rows());
  const double rt2 = std::sqrt(2.0);
  int idx = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i, ++idx)
      out[idx] = (i == j) ? X(i, j) : 0.5 * rt2 * (X(i, j) + X(j, i));
}

// Internal view of one cone block: s = h - G x restricted to touched columns.
struct ConeData {
  ConeKind kind;
  int dim;   // nonneg rows / soc dim / psd side
  int rows;  // svec rows
  int offset;
  std::vector<int> cols;
  MatrixXd G;   // rows x cols.size(), cvxopt sign convention (G = -H)
  VectorXd h;   // s = h - G x

  // Nesterov-Todd scaling state.
  VectorXd w;        // nonneg: w_i = sqrt(s_i / z_i)
  double eta = 1.0;  // soc
  VectorXd wbar;     // soc
  MatrixXd R, Rinv;  // psd

  std::vector<int> slots;  // KKT value positions of the lower clique
};

class Ipm {
 public:
  Ipm(const ConicProgram& prog, const SolveOptions& opts)
      : prog_(prog), opts_(opts) {}

  SolveResult run();

 private:
  void build();
  void build_kkt_pattern();
  void factor_kkt();
  bool solve_kkt(VectorXd& rx, VectorXd& ry) const;  // in-place augmented solve
  // Solves the 3x3 scaled KKT system; bz is overwritten with uz.
  bool kkt_3x3(VectorXd& bx, VectorXd& by, VectorXd& bz) const;
  bool kkt_3x3_once(VectorXd& bx, VectorXd& by, VectorXd& bz) const;
  VectorXd apply_WtW(const VectorXd& v) const;

  VectorXd mul_G(const VectorXd& x) const;
  VectorXd mul_GT(const VectorXd& z) const;
  void apply_W(const VectorXd& in, VectorXd& out, bool trans, bool inv) const;
  VectorXd jordan_mul(const VectorXd& a, const VectorXd& b) const;
  VectorXd jordan_solve(const VectorXd& lam, const VectorXd& d) const;
  VectorXd cone_identity() const;
  // Largest t such that v + t e is outside the cone boundary (cvxopt max_step).
  double max_step(const VectorXd& v) const;
  VectorXd scale2(const VectorXd& lam, const VectorXd& v) const;
  void bring_interior(VectorXd& v) const;

  const ConicProgram& prog_;
  SolveOptions opts_;

  int n_ = 0, p_ = 0, m_ = 0;
  double deg_ = 0.0;
  SpMat P_;  // full symmetric
  VectorXd q_;
  SpMat A_;
  VectorXd b_;
  std::vector<ConeData> cones_;

  SpMat kkt_;       // true KKT values (for residuals and products)
  SpMat kkt_reg_;   // Ruiz-scaled, regularized copy (factorized)
  VectorXd ruiz_;   // symmetric equilibration scale
  std::vector<double> base_vals_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt_;
  bool analyzed_ = false;
};

void Ipm::build() {
  n_ = prog_.num_vars();
  p_ = prog_.num_eq_rows();

  q_ = VectorXd::Zero(n_);
  for (const auto& [i, c] : prog_.obj_linear()) q_[i] += c;

  std::vector<Eigen::Triplet<double>> pt;
  for (const auto& [ij, c] : prog_.obj_quad()) {
    // objective stores sum c_ij x_i x_j; P is the Hessian.
    if (ij.first == ij.second) {
      pt.emplace_back(ij.first, ij.first, 2.0 * c);
    } else {
      pt.emplace_back(ij.first, ij.second, c);
      pt.emplace_back(ij.second, ij.first, c);
    }
  }
  P_.resize(n_, n_);
  P_.setFromTriplets(pt.begin(), pt.end());

  std::vector<Eigen::Triplet<double>> at;
  for (const auto& t : prog_.eq_entries()) at.emplace_back(t.row, t.col, t.value);
  A_.resize(p_, n_);
  A_.setFromTriplets(at.begin(), at.end());
  b_ = Eigen::Map<const VectorXd>(prog_.eq_rhs().data(), p_);

  m_ = 0;
  deg_ = 0.0;
  for (const auto& cb : prog_.cones()) {
    ConeData cd;
    cd.kind = cb.kind;
    cd.dim = cb.dim;
    cd.rows = cb.rows();
    cd.offset = m_;
    std::vector<int> cols;
    for (const auto& t : cb.entries) cols.push_back(t.col);
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    cd.cols = cols;
    cd.G = MatrixXd::Zero(cd.rows, static_cast<int>(cols.size()));
    for (const auto& t : cb.entries) {
      const int j = static_cast<int>(
          std::lower_bound(cols.begin(), cols.end(), t.col) - cols.begin());
      cd.G(t.row, j) -= t.value;  // G = -H
    }
    cd.h = cb.constant;
    m_ += cd.rows;
    switch (cd.kind) {
      case ConeKind::NonNeg: deg_ += cd.dim; break;
      case ConeKind::SecondOrder: deg_ += 1; break;
      case ConeKind::Psd: deg_ += cd.dim; break;
    }
    cones_.push_back(std::move(cd));
  }
  build_kkt_pattern();
}

void Ipm::build_kkt_pattern() {
  const int N = n_ + p_;
  std::vector<Eigen::Triplet<double>> tr;
  // Diagonal slots always exist (regularization).
  for (int i = 0; i < N; ++i) tr.emplace_back(i, i, 0.0);
  for (int k = 0; k < P_.outerSize(); ++k)
    for (SpMat::InnerIterator it(P_, k); it; ++it)
      if (it.row() >= it.col()) tr.emplace_back(it.row(), it.col(), 0.0);
  for (int k = 0; k < A_.outerSize(); ++k)
    for (SpMat::InnerIterator it(A_, k); it; ++it)
      tr.emplace_back(n_ + it.row(), it.col(), 0.0);
  for (const auto& cd : cones_) {
    const int nc = static_cast<int>(cd.cols.size());
    for (int a = 0; a < nc; ++a)
      for (int bcol = 0; bcol <= a; ++bcol)
        tr.emplace_back(cd.cols[a], cd.cols[bcol], 0.0);
  }
  kkt_.resize(N, N);
  kkt_.setFromTriplets(tr.begin(), tr.end());
  kkt_.makeCompressed();

  auto slot = [this](int r, int c) {
    const int* ip = kkt_.innerIndexPtr();
    const int* op = kkt_.outerIndexPtr();
    const int lo = op[c], hi = op[c + 1];
    const int* found = std::lower_bound(ip + lo, ip + hi, r);
    return static_cast<int>(found - ip);
  };

  kkt_reg_ = kkt_;
  ruiz_ = VectorXd::Ones(N);

  base_vals_.assign(kkt_.nonZeros(), 0.0);
  for (int k = 0; k < P_.outerSize(); ++k)
    for (SpMat::InnerIterator it(P_, k); it; ++it)
      if (it.row() >= it.col())
        base_vals_[slot(static_cast<int>(it.row()),
                        static_cast<int>(it.col()))] += it.value();
  for (int k = 0; k < A_.outerSize(); ++k)
    for (SpMat::InnerIterator it(A_, k); it; ++it)
      base_vals_[slot(n_ + static_cast<int>(it.row()),
                      static_cast<int>(it.col()))] += it.value();
  for (auto& cd : cones_) {
    cd.slots.clear();
    const int nc = static_cast<int>(cd.cols.size());
    cd.slots.reserve(static_cast<size_t>(nc) * (nc + 1) / 2);
    for (int a = 0; a < nc; ++a)
      for (int bcol = 0; bcol <= a; ++bcol)
        cd.slots.push_back(slot(std::max(cd.cols[a], cd.cols[bcol]),
                                std::min(cd.cols[a], cd.cols[bcol])));
  }
}

VectorXd Ipm::mul_G(const VectorXd& x) const {
  VectorXd out(m_);
  for (const auto& cd : cones_) {
    VectorXd xl(cd.cols.size());
    for (size_t j = 0; j < cd.cols.size(); ++j) xl[j] = x[cd.cols[j]];
    out.segment(cd.offset, cd.rows) = cd.G * xl;
  }
  return out;
}

VectorXd Ipm::mul_GT(const VectorXd& z) const {
  VectorXd out = VectorXd::Zero(n_);
  for (const auto& cd : cones_) {
    VectorXd contrib = cd.G.transpose() * z.segment(cd.offset, cd.rows);
    for (size_t j = 0; j < cd.cols.size(); ++j) out[cd.cols[j]] += contrib[j];
  }
  return out;
}

void Ipm::factor_kkt() {
  std::copy(base_vals_.begin(), base_vals_.end(), kkt_.valuePtr());
  for (auto& cd : cones_) {
    const int nc = static_cast<int>(cd.cols.size());
    MatrixXd U;
    switch (cd.kind) {
      case ConeKind::NonNeg: {
        U = cd.w.array().square().inverse().matrix().asDiagonal() * cd.G;
        break;
      }
      case ConeKind::SecondOrder: {
        // W^-2 = eta^-2 (2 u u' - J), u = J wbar.
        VectorXd u = cd.wbar;
        u.tail(u.size() - 1) *= -1.0;
        const Eigen::RowVectorXd utG = u.transpose() * cd.G;
        MatrixXd JG = cd.G;
        JG.bottomRows(cd.rows - 1) *= -1.0;
        U = (2.0 * u * utG - JG) / (cd.eta * cd.eta);
        break;
      }
      case ConeKind::Psd: {
        const MatrixXd theta = cd.Rinv.transpose() * cd.Rinv;
        U.resize(cd.rows, nc);
        for (int c = 0; c < nc; ++c) {
          MatrixXd X = unsvec(cd.G.col(c), cd.dim);
          MatrixXd Y = theta * X * theta;
          svec_into(Y, U.col(c));
        }
        break;
      }
    }
    MatrixXd clique = cd.G.transpose() * U;
    double* vals = kkt_.valuePtr();
    size_t si = 0;
    for (int a = 0; a < nc; ++a)
      for (int bcol = 0; bcol <= a; ++bcol)
        vals[cd.slots[si++]] += 0.5 * (clique(a, bcol) + clique(bcol, a));
  }
  // Ruiz equilibration: symmetric row/column scaling toward unit row norms,
  // then static +/- regularization at the scaled level. Keeps pivot growth
  // bounded for the quasi-definite system.
  const int N = n_ + p_;
  ruiz_.setOnes();
  std::copy(kkt_.valuePtr(), kkt_.valuePtr() + kkt_.nonZeros(),
            kkt_reg_.valuePtr());
  const int* outer = kkt_reg_.outerIndexPtr();
  const int* inner = kkt_reg_.innerIndexPtr();
  for (int round = 0; round < 3; ++round) {
    VectorXd rmax = VectorXd::Zero(N);
    double* vals = kkt_reg_.valuePtr();
    for (int c = 0; c < N; ++c)
      for (int idx = outer[c]; idx < outer[c + 1]; ++idx) {
        const double a = std::abs(vals[idx]);
        const int r = inner[idx];
        rmax[c] = std::max(rmax[c], a);
        rmax[r] = std::max(rmax[r], a);
      }
    VectorXd d(N);
    for (int i = 0; i < N; ++i)
      d[i] = rmax[i] > 1e-12 ? 1.0 / std::sqrt(rmax[i]) : 1.0;
    for (int c = 0; c < N; ++c)
      for (int idx = outer[c]; idx < outer[c + 1]; ++idx)
        vals[idx] *= d[inner[idx]] * d[c];
    ruiz_ = ruiz_.cwiseProduct(d);
  }
  {
    double* vals = kkt_reg_.valuePtr();
    for (int c = 0; c < N; ++c)
      for (int idx = outer[c]; idx < outer[c + 1]; ++idx)
        if (inner[idx] == c) vals[idx] += (c < n_) ? kKktReg : -kKktReg;
  }
  if (!analyzed_) {
    ldlt_.analyzePattern(kkt_reg_);
    analyzed_ = true;
  }
  ldlt_.factorize(kkt_reg_);
}

bool Ipm::solve_kkt(VectorXd& rx, VectorXd& ry) const {
  if (ldlt_.info() != Eigen::Success) return false;
  VectorXd rhs(n_ + p_);
  rhs.head(n_) = rx;
  rhs.tail(p_) = ry;
  // Solve D K D (D^-1 u) = D rhs with the scaled, regularized factorization,
  // then refine against the true system.
  VectorXd u = ruiz_.cwiseProduct(ldlt_.solve(ruiz_.cwiseProduct(rhs)));
  const double rhs_scale = 1.0 + rhs.norm();
  double prev = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 10; ++round) {
    VectorXd resid = rhs - kkt_.selfadjointView<Eigen::Lower>() * u;
    const double rn = resid.norm();
    if (rn <= 1e-13 * rhs_scale || rn >= 0.5 * prev) break;
    prev = rn;
    u += ruiz_.cwiseProduct(ldlt_.solve(ruiz_.cwiseProduct(resid)));
  }
  if (!u.allFinite()) return false;
  rx = u.head(n_);
  ry = u.tail(p_);
  return true;
}

VectorXd Ipm::apply_WtW(const VectorXd& v) const {
  VectorXd t, out;
  apply_W(v, t, /*trans=*/false, /*inv=*/false);
  apply_W(t, out, /*trans=*/true, /*inv=*/false);
  return out;
}

bool Ipm::kkt_3x3(VectorXd& bx, VectorXd& by, VectorXd& bz) const {
  const VectorXd bx0 = bx, by0 = by, bz0 = bz;
  if (!kkt_3x3_once(bx, by, bz)) return false;
  // Refinement at the 3x3 level: the cone-block elimination amplifies solve
  // error by W^-2, which this recovers.
  for (int round = 0; round < 2; ++round) {
    VectorXd r1 = bx0 - (P_.selfadjointView<Eigen::Upper>() * bx +
                         A_.transpose() * by + mul_GT(bz));
    VectorXd r2 = by0 - A_ * bx;
    VectorXd r3 = bz0 - (mul_G(bx) - apply_WtW(bz));
    const double scale = 1.0 + bx0.norm() + by0.norm() + bz0.norm();
    if (std::max({r1.norm(), p_ > 0 ? r2.norm() : 0.0, r3.norm()}) <=
        1e-12 * scale)
      break;
    if (!kkt_3x3_once(r1, r2, r3)) return false;
    bx += r1;
    by += r2;
    bz += r3;
  }
  return true;
}

bool Ipm::kkt_3x3_once(VectorXd& bx, VectorXd& by, VectorXd& bz) const {
  // Solve [P A' G'; A 0 0; G 0 -W'W] [ux;uy;uz] = [bx;by;bz].
  // uz = (W'W)^-1 (G ux - bz); reduced rhs_x = bx + G' (W'W)^-1 bz.
  VectorXd tb(m_);
  for (const auto& cd : cones_) {
    auto seg = bz.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        tb.segment(cd.offset, cd.rows) = seg.cwiseQuotient(cd.w.cwiseAbs2());
        break;
      case ConeKind::SecondOrder: {
        VectorXd u = cd.wbar;
        u.tail(u.size() - 1) *= -1.0;
        VectorXd jseg = seg;
        jseg.tail(cd.rows - 1) *= -1.0;
        tb.segment(cd.offset, cd.rows) =
            (2.0 * u.dot(seg) * u - jseg) / (cd.eta * cd.eta);
        break;
      }
      case ConeKind::Psd: {
        const MatrixXd theta = cd.Rinv.transpose() * cd.Rinv;
        MatrixXd X = unsvec(seg, cd.dim);
        MatrixXd Y = theta * X * theta;
        VectorXd out(cd.rows);
        svec_into(Y, out);
        tb.segment(cd.offset, cd.rows) = out;
        break;
      }
    }
  }
  VectorXd rx = bx + mul_GT(tb);
  VectorXd ry = by;
  if (!solve_kkt(rx, ry)) return false;
  // uz = (W'W)^-1 (G ux - bz)
  VectorXd gux = mul_G(rx);
  VectorXd diff = gux - bz;
  for (const auto& cd : cones_) {
    auto seg = diff.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        bz.segment(cd.offset, cd.rows) = seg.cwiseQuotient(cd.w.cwiseAbs2());
        break;
      case ConeKind::SecondOrder: {
        VectorXd u = cd.wbar;
        u.tail(u.size() - 1) *= -1.0;
        VectorXd jseg = seg;
        jseg.tail(cd.rows - 1) *= -1.0;
        bz.segment(cd.offset, cd.rows) =
            (2.0 * u.dot(seg) * u - jseg) / (cd.eta * cd.eta);
        break;
      }
      case ConeKind::Psd: {
        const MatrixXd theta = cd.Rinv.transpose() * cd.Rinv;
        MatrixXd X = unsvec(seg, cd.dim);
        MatrixXd Y = theta * X * theta;
        VectorXd out(cd.rows);
        svec_into(Y, out);
        bz.segment(cd.offset, cd.rows) = out;
        break;
      }
    }
  }
  bx = rx;
  by = ry;
  return true;
}

void Ipm::apply_W(const VectorXd& in, VectorXd& out, bool trans, bool inv) const {
  out.resize(m_);
  for (const auto& cd : cones_) {
    auto seg = in.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        out.segment(cd.offset, cd.rows) =
            inv ? seg.cwiseQuotient(cd.w).eval() : seg.cwiseProduct(cd.w).eval();
        break;
      case ConeKind::SecondOrder: {
        // W = eta V with V = [wbar0, wbar1'; wbar1, I + wbar1 wbar1'/(1+wbar0)];
        // symmetric, and W^-1 = eta^-1 J V J.
        const auto w1 = cd.wbar.tail(cd.rows - 1);
        const double w0 = cd.wbar[0];
        const double w1v = w1.dot(seg.tail(cd.rows - 1));
        VectorXd o(cd.rows);
        if (!inv) {
          o[0] = w0 * seg[0] + w1v;
          o.tail(cd.rows - 1) =
              seg.tail(cd.rows - 1) + (seg[0] + w1v / (1.0 + w0)) * w1;
          o *= cd.eta;
        } else {
          o[0] = w0 * seg[0] - w1v;
          o.tail(cd.rows - 1) =
              seg.tail(cd.rows - 1) - (seg[0] - w1v / (1.0 + w0)) * w1;
          o /= cd.eta;
        }
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
      case ConeKind::Psd: {
        MatrixXd X = unsvec(seg, cd.dim);
        MatrixXd Y;
        if (!inv) {
          if (trans)
            Y = cd.R * X * cd.R.transpose();
          else
            Y = cd.R.transpose() * X * cd.R;
        } else {
          if (trans)
            Y = cd.Rinv * X * cd.Rinv.transpose();
          else
            Y = cd.Rinv.transpose() * X * cd.Rinv;
        }
        VectorXd o(cd.rows);
        svec_into(Y, o);
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
    }
  }
}

VectorXd Ipm::jordan_mul(const VectorXd& a, const VectorXd& b) const {
  VectorXd out(m_);
  for (const auto& cd : cones_) {
    auto sa = a.segment(cd.offset, cd.rows);
    auto sb = b.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        out.segment(cd.offset, cd.rows) = sa.cwiseProduct(sb);
        break;
      case ConeKind::SecondOrder: {
        VectorXd o(cd.rows);
        o[0] = sa.dot(sb);
        o.tail(cd.rows - 1) =
            sa[0] * sb.tail(cd.rows - 1) + sb[0] * sa.tail(cd.rows - 1);
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
      case ConeKind::Psd: {
        MatrixXd X = unsvec(sa, cd.dim);
        MatrixXd Y = unsvec(sb, cd.dim);
        MatrixXd Z = 0.5 * (X * Y + Y * X);
        VectorXd o(cd.rows);
        svec_into(Z, o);
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
    }
  }
  return out;
}

VectorXd Ipm::jordan_solve(const VectorXd& lam, const VectorXd& d) const {
  VectorXd out(m_);
  for (const auto& cd : cones_) {
    auto sl = lam.segment(cd.offset, cd.rows);
    auto sd = d.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        out.segment(cd.offset, cd.rows) = sd.cwiseQuotient(sl);
        break;
      case ConeKind::SecondOrder: {
        const double jlam = sl[0] * sl[0] - sl.tail(cd.rows - 1).squaredNorm();
        VectorXd o(cd.rows);
        o[0] = (sl[0] * sd[0] - sl.tail(cd.rows - 1).dot(sd.tail(cd.rows - 1))) /
               jlam;
        o.tail(cd.rows - 1) =
            (sd.tail(cd.rows - 1) - o[0] * sl.tail(cd.rows - 1)) / sl[0];
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
      case ConeKind::Psd: {
        // lambda is diagonal: U_ij = 2 D_ij / (l_i + l_j).
        MatrixXd D = unsvec(sd, cd.dim);
        VectorXd l = unsvec(sl, cd.dim).diagonal();
        MatrixXd U(cd.dim, cd.dim);
        for (int i = 0; i < cd.dim; ++i)
          for (int j = 0; j < cd.dim; ++j)
            U(i, j) = 2.0 * D(i, j) / (l[i] + l[j]);
        VectorXd o(cd.rows);
        svec_into(U, o);
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
    }
  }
  return out;
}

VectorXd Ipm::cone_identity() const {
  VectorXd e = VectorXd::Zero(m_);
  for (const auto& cd : cones_) {
    switch (cd.kind) {
      case ConeKind::NonNeg:
        e.segment(cd.offset, cd.rows).setOnes();
        break;
      case ConeKind::SecondOrder:
        e[cd.offset] = 1.0;
        break;
      case ConeKind::Psd:
        for (int i = 0, idx = 0, rem = cd.dim; i < cd.dim; ++i, rem--) {
          e[cd.offset + idx] = 1.0;
          idx += rem;
        }
        break;
    }
  }
  return e;
}

double Ipm::max_step(const VectorXd& v) const {
  double t = -std::numeric_limits<double>::infinity();
  for (const auto& cd : cones_) {
    auto seg = v.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        t = std::max(t, -seg.minCoeff());
        break;
      case ConeKind::SecondOrder:
        t = std::max(t, seg.tail(cd.rows - 1).norm() - seg[0]);
        break;
      case ConeKind::Psd: {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(unsvec(seg, cd.dim),
                                                    Eigen::EigenvaluesOnly);
        t = std::max(t, -eig.eigenvalues().minCoeff());
        break;
      }
    }
  }
  return t;
}

VectorXd Ipm::scale2(const VectorXd& lam, const VectorXd& v) const {
  VectorXd out(m_);
  for (const auto& cd : cones_) {
    auto sl = lam.segment(cd.offset, cd.rows);
    auto sv = v.segment(cd.offset, cd.rows);
    switch (cd.kind) {
      case ConeKind::NonNeg:
        out.segment(cd.offset, cd.rows) = sv.cwiseQuotient(sl);
        break;
      case ConeKind::SecondOrder: {
        // x := 1/a [ lx; x1 - (lx + x0)/(l0/a + 1)/a * l1 ] with
        // a = sqrt(J(lambda)), lx = <lambda, J x>/a.
        const double a =
            std::sqrt(sl[0] * sl[0] - sl.tail(cd.rows - 1).squaredNorm());
        const double lx =
            (sl[0] * sv[0] - sl.tail(cd.rows - 1).dot(sv.tail(cd.rows - 1))) /
            a;
        const double c = (lx + sv[0]) / (sl[0] / a + 1.0) / a;
        VectorXd o(cd.rows);
        o[0] = lx / a;
        o.tail(cd.rows - 1) =
            (sv.tail(cd.rows - 1) - c * sl.tail(cd.rows - 1)) / a;
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
      case ConeKind::Psd: {
        VectorXd l = unsvec(sl, cd.dim).diagonal();
        MatrixXd X = unsvec(sv, cd.dim);
        for (int i = 0; i < cd.dim; ++i)
          for (int j = 0; j < cd.dim; ++j)
            X(i, j) /= std::sqrt(l[i] * l[j]);
        VectorXd o(cd.rows);
        svec_into(X, o);
        out.segment(cd.offset, cd.rows) = o;
        break;
      }
    }
  }
  return out;
}

void Ipm::bring_interior(VectorXd& v) const {
  const double t = max_step(v);
  if (t >= -1e-8) {
    VectorXd e = cone_identity();
    v += (1.0 + t) * e;
  }
}

SolveResult Ipm::run() {
  SolveResult res;
  build();

  if (m_ == 0 && p_ == 0 && prog_.obj_quad().empty()) {
    // Unconstrained linear objective.
    if (q_.norm() == 0.0) {
      res.status = SolveStatus::Optimal;
      res.x = VectorXd::Zero(n_);
      res.objective = prog_.obj_constant();
    } else {
      res.status = SolveStatus::Unbounded;
    }
    return res;
  }

  if (m_ == 0) {
    // Equality-constrained QP: a single KKT solve.
    factor_kkt();
    VectorXd rx = -q_, ry = b_;
    if (ldlt_.info() != Eigen::Success || !solve_kkt(rx, ry)) {
      res.status = SolveStatus::NumericalFailure;
      return res;
    }
    res.status = SolveStatus::Optimal;
    res.x = rx;
    res.objective = prog_.objective_value(rx);
    res.iterations = 1;
    return res;
  }

  // Interior starting point (scaling = identity).
  for (auto& cd : cones_) {
    switch (cd.kind) {
      case ConeKind::NonNeg: cd.w = VectorXd::Ones(cd.rows); break;
      case ConeKind::SecondOrder:
        cd.eta = 1.0;
        cd.wbar = VectorXd::Zero(cd.rows);
        cd.wbar[0] = 1.0;
        break;
      case ConeKind::Psd:
        cd.R = MatrixXd::Identity(cd.dim, cd.dim);
        cd.Rinv = cd.R;
        break;
    }
  }
  factor_kkt();
  if (ldlt_.info() != Eigen::Success) {
    res.status = SolveStatus::NumericalFailure;
    res.message = "initial KKT factorization failed";
    return res;
  }

  VectorXd x = -q_, y = b_, z(m_), s(m_);
  VectorXd h(m_);
  for (const auto& cd : cones_) h.segment(cd.offset, cd.rows) = cd.h;
  {
    VectorXd bz = h;
    if (!kkt_3x3(x, y, bz)) {
      res.status = SolveStatus::NumericalFailure;
      res.message = "initialization solve failed";
      return res;
    }
    z = bz;
    s = -bz;
    bring_interior(s);
    bring_interior(z);
  }

  const double resx0 = std::max(1.0, q_.norm());
  const double resy0 = std::max(1.0, b_.norm());
  const double resz0 = std::max(1.0, h.norm());
  const double feastol = opts_.tol * 0.1;
  const double abstol = opts_.tol;
  const double reltol = opts_.tol;

  VectorXd lam(m_);
  double pcost0 = 0.0;
  // Best iterate so far, used as a fallback when late iterations degrade.
  VectorXd best_x;
  double best_merit = std::numeric_limits<double>::infinity();
  double best_obj = 0.0;
  auto finish_with_best = [&](SolveStatus fallback,
                              const std::string& msg) -> SolveResult {
    if (best_merit <= 1.0) {
      res.status = SolveStatus::Optimal;
      res.x = best_x;
      res.objective = best_obj;
      res.message = msg.empty() ? "converged (best iterate)" : msg;
    } else {
      res.status = fallback;
      res.message = msg;
    }
    return res;
  };

  const auto t_begin = std::chrono::steady_clock::now();
  for (int iter = 0; iter <= opts_.max_iters; ++iter) {
    res.iterations = iter;
    if (opts_.time_budget_ms > 0.0 && iter > 0) {
      const double elapsed = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t_begin)
                                 .count();
      if (elapsed > opts_.time_budget_ms)
        return finish_with_best(SolveStatus::IterationLimit,
                                "time budget exceeded");
    }
    VectorXd px = P_.selfadjointView<Eigen::Upper>() * x;
    const double pcost = 0.5 * x.dot(px) + q_.dot(x) + prog_.obj_constant();
    if (iter == 0) pcost0 = pcost;
    VectorXd rx = px + q_ + A_.transpose() * y + mul_GT(z);
    VectorXd ry = A_ * x - b_;
    VectorXd rz = mul_G(x) + s - h;
    const double gap = s.dot(z);
    const double dcost = pcost + y.dot(ry) + z.dot(rz) - gap;
    const double relgap = gap / std::max(1.0, std::abs(pcost));
    const double pres = std::max(ry.norm() / resy0, rz.norm() / resz0);
    const double dres = rx.norm() / resx0;
    // Absolute primal residual: s lies in the cone by construction, so the
    // cone-constraint violation of x is bounded by ||rz||_inf.
    const double pres_abs =
        std::max(p_ > 0 ? ry.lpNorm<Eigen::Infinity>() : 0.0,
                 m_ > 0 ? rz.lpNorm<Eigen::Infinity>() : 0.0);

    if (opts_.verbose)
      std::printf("ipm %3d pcost % .6e dcost % .6e gap %.2e pres %.2e dres %.2e\n",
                  iter, pcost, dcost, gap, pres, dres);

    const double merit =
        std::max({pres / feastol, dres / feastol, pres_abs / (0.5 * opts_.tol),
                  std::min(gap / abstol, relgap / reltol)});
    if (merit < best_merit) {
      best_merit = merit;
      best_x = x;
      best_obj = pcost;
    }
    if (merit <= 1.0) {
      res.status = SolveStatus::Optimal;
      res.x = x;
      res.objective = pcost;
      return res;
    }
    // Endgame breakdown guard: once residuals degrade far past the best
    // iterate, further iterations only get worse.
    if (iter > 3 && merit > 1e3 * best_merit)
      return finish_with_best(SolveStatus::NumericalFailure,
                              "residuals diverged after best iterate");

    (void)pcost0;

    if (iter == opts_.max_iters)
      return finish_with_best(SolveStatus::IterationLimit,
                              "maximum interior-point iterations reached");

    // Nesterov-Todd scalings from (s, z).
    for (auto& cd : cones_) {
      auto ss = s.segment(cd.offset, cd.rows);
      auto zz = z.segment(cd.offset, cd.rows);
      switch (cd.kind) {
        case ConeKind::NonNeg:
          cd.w = (ss.cwiseQuotient(zz)).cwiseSqrt();
          break;
        case ConeKind::SecondOrder: {
          const double js =
              std::sqrt(ss[0] * ss[0] - ss.tail(cd.rows - 1).squaredNorm());
          const double jz =
              std::sqrt(zz[0] * zz[0] - zz.tail(cd.rows - 1).squaredNorm());
          VectorXd sb = ss / js, zb = zz / jz;
          const double gamma = std::sqrt((1.0 + sb.dot(zb)) / 2.0);
          VectorXd jzb = zb;
          jzb.tail(cd.rows - 1) *= -1.0;
          cd.wbar = (sb + jzb) / (2.0 * gamma);
          cd.eta = std::sqrt(js / jz);
          break;
        }
        case ConeKind::Psd: {
          MatrixXd S = unsvec(ss, cd.dim), Z = unsvec(zz, cd.dim);
          Eigen::LLT<MatrixXd> ls(S), lz(Z);
          if (ls.info() != Eigen::Success || lz.info() != Eigen::Success)
            return finish_with_best(SolveStatus::NumericalFailure,
                                    "scaling Cholesky failed");
          MatrixXd Ls = ls.matrixL(), Lz = lz.matrixL();
          Eigen::JacobiSVD<MatrixXd> svd(Lz.transpose() * Ls,
                                         Eigen::ComputeFullU | Eigen::ComputeFullV);
          VectorXd sig = svd.singularValues();
          MatrixXd sighalf = sig.cwiseSqrt().asDiagonal();
          cd.R = Ls * svd.matrixV() * sighalf.inverse();
          cd.Rinv = sighalf.inverse() * svd.matrixU().transpose() * Lz.transpose();
          break;
        }
      }
    }
    // Scaled point lambda = W z (= W^-T s).
    apply_W(z, lam, /*trans=*/false, /*inv=*/false);

    factor_kkt();
    if (ldlt_.info() != Eigen::Success)
      return finish_with_best(SolveStatus::NumericalFailure,
                              "KKT factorization failed");

    const double mu = gap / deg_;
    const VectorXd e = cone_identity();

    // Affine (predictor) direction.
    VectorXd dx = -rx, dy = -ry;
    VectorXd lamlam = jordan_mul(lam, lam);
    VectorXd d_aff = -lamlam;
    VectorXd wsol = jordan_solve(lam, d_aff);
    VectorXd wts;
    apply_W(wsol, wts, /*trans=*/true, /*inv=*/false);
    VectorXd bz = -rz - wts;
    if (!kkt_3x3(dx, dy, bz))
      return finish_with_best(SolveStatus::NumericalFailure,
                              "KKT solve failed");
    VectorXd dz_aff = bz;
    VectorXd wdz;
    apply_W(dz_aff, wdz, false, false);
    // Row 3 of the Newton system holds exactly: ds = -rz - G dx.
    VectorXd ds_aff = -rz - mul_G(dx);
    VectorXd ds_scaled_aff;
    apply_W(ds_aff, ds_scaled_aff, /*trans=*/true, /*inv=*/true);  // W^-T ds

    const double ts = max_step(scale2(lam, ds_scaled_aff));
    const double tz = max_step(scale2(lam, wdz));
    const double tmax = std::max({ts, tz, 0.0});
    const double alpha_aff = tmax <= 0.0 ? 1.0 : std::min(1.0, 1.0 / tmax);
    const double gap_aff = (s + alpha_aff * ds_aff).dot(z + alpha_aff * dz_aff);
    double sigma = std::pow(std::clamp(gap_aff / gap, 0.0, 1.0), 3.0);

    // Combined (corrector) direction.
    VectorXd corr = jordan_mul(ds_scaled_aff, wdz);
    VectorXd d_comb = sigma * mu * e - lamlam - corr;
    dx = -rx;
    dy = -ry;
    wsol = jordan_solve(lam, d_comb);
    apply_W(wsol, wts, true, false);
    bz = -rz - wts;
    if (!kkt_3x3(dx, dy, bz))
      return finish_with_best(SolveStatus::NumericalFailure,
                              "KKT solve failed");
    VectorXd dz = bz;
    apply_W(dz, wdz, false, false);
    VectorXd ds = -rz - mul_G(dx);
    VectorXd ds_scaled;
    apply_W(ds, ds_scaled, /*trans=*/true, /*inv=*/true);

    // Certificate checks on the search direction: for an infeasible problem
    // the dual direction diverges along a Farkas ray; for an unbounded one
    // the primal direction is a recession ray.
    if (iter >= 1) {
      const double dscale = std::max(
          {1.0, dy.lpNorm<Eigen::Infinity>(), dz.lpNorm<Eigen::Infinity>()});
      const double denom = -(b_.dot(dy) + h.dot(dz));
      if (denom >= 1e-6 * dscale && max_step(dz) <= 1e-8 * dscale) {
        const VectorXd cert = A_.transpose() * dy + mul_GT(dz);
        if (cert.lpNorm<Eigen::Infinity>() <= 1e-8 * dscale) {
          res.status = SolveStatus::Infeasible;
          res.message = "primal infeasibility certificate found";
          return res;
        }
      }
      const double xscale = std::max(1.0, dx.lpNorm<Eigen::Infinity>());
      if (q_.dot(dx) <= -1e-6 * xscale &&
          (P_ * dx).lpNorm<Eigen::Infinity>() <= 1e-8 * xscale &&
          (p_ == 0 ||
           (A_ * dx).lpNorm<Eigen::Infinity>() <= 1e-8 * xscale) &&
          max_step(-mul_G(dx)) <= 1e-8 * xscale) {
        res.status = SolveStatus::Unbounded;
        res.message = "dual infeasibility certificate found";
        return res;
      }
    }

    const double ts2 = max_step(scale2(lam, ds_scaled));
    const double tz2 = max_step(scale2(lam, wdz));
    const double t2 = std::max({ts2, tz2, 0.0});
    const double alpha = t2 <= 0.0 ? 1.0 : std::min(1.0, kStep / t2);

    if (alpha < 1e-13)
      return finish_with_best(SolveStatus::NumericalFailure,
                              "step length collapsed");

    x += alpha * dx;
    y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
  }
  res.status = SolveStatus::IterationLimit;
  return res;
}

}  // namespace

SolveResult solve(const ConicProgram& prog, const SolveOptions& opts) {
  Ipm ipm(prog, opts);
  return ipm.run();
}

}  // namespace rsteer::conic
