#include <doctest.h>

#include <Eigen/Dense>

#include "rsteer/rng.hpp"
#include "rsteer/uncertainty.hpp"
#include "support/oracles.hpp"

using namespace rsteer;
using namespace rsteer::uncertainty;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_spd(Rng& rng, int n, double cond_boost = 0.5) {
  MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
  return A * A.transpose() + cond_boost * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("support value basics") {
  SUBCASE("identity instance") {
    UncertaintySet set = UncertaintySet::identity(3, 4.0);
    VectorXd a = VectorXd::Zero(3);
    a[0] = 1.0;
    CHECK(support_value(set, a) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("vanishing uncertainty level") {
    UncertaintySet set = UncertaintySet::identity(3, 1e-300);
    VectorXd a = VectorXd::Ones(3);
    CHECK(support_value(set, a) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("homogeneity in tau") {
    Rng rng(5);
    MatrixXd S = random_spd(rng, 4);
    VectorXd a = rng.normal_vector(4);
    UncertaintySet s1(MatrixXd::Identity(4, 4), S, 1.5);
    UncertaintySet s2(MatrixXd::Identity(4, 4), S, 3.0);
    CHECK(support_value(s2, a) ==
          doctest::Approx(std::sqrt(2.0) * support_value(s1, a)).epsilon(1e-12));
  }
  SUBCASE("invalid sets are rejected") {
    CHECK_THROWS_AS(UncertaintySet::identity(2, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(UncertaintySet(MatrixXd::Identity(2, 2),
                                   -MatrixXd::Identity(2, 2), 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("support value matches boundary-sampling oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const int nz = 6, nb = 6;
    MatrixXd Gamma(nz, nb);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nb; ++j) Gamma(i, j) = rng.normal();
    MatrixXd S = random_spd(rng, nb);
    const double tau = 0.5 + rng.uniform();
    UncertaintySet set(Gamma, S, tau);

    // a^T M zeta with a random effective row vector c^T = a^T M.
    VectorXd c = rng.normal_vector(nz);
    VectorXd Mt_a = Gamma.transpose() * c;
    const double sv = support_value(set, Mt_a);

    // The maximum of a linear form over the ellipsoid is attained on the
    // boundary <S z, z> = tau.
    const double best = rsteer::testsupport::boundary_max_oracle(
        Gamma, S, tau, c, 200000, 1000 + trial);
    CHECK(std::abs(sv - best) / std::abs(best) <= 1e-3);
    // And its negation is the minimum (symmetry of max/min).
    const double worst = -rsteer::testsupport::boundary_max_oracle(
        Gamma, S, tau, -c, 200000, 2000 + trial);
    CHECK(std::abs(-sv - worst) / std::abs(sv) <= 1e-3);
  }
}

TEST_CASE("worst-case direction attains the support value") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int nb = 5;
    MatrixXd Gamma = MatrixXd::Identity(nb, nb);
    MatrixXd S = random_spd(rng, nb);
    UncertaintySet set(Gamma, S, 0.7);
    VectorXd v = rng.normal_vector(nb);
    VectorXd z = worst_case_z(set, v);
    CHECK(z.dot(S * z) == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(v.dot(z) == doctest::Approx(support_value(set, v)).epsilon(1e-9));
  }
}

TEST_CASE("disturbance sampling") {
  Rng rng(31);
  MatrixXd S = random_spd(rng, 4);
  MatrixXd Gamma(6, 4);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) Gamma(i, j) = rng.normal();
  UncertaintySet set(Gamma, S, 1.3);

  SUBCASE("all samples are members") {
    for (auto mode : {SampleMode::Interior, SampleMode::Boundary}) {
      auto samples = sample_disturbance(set, 200, 7, mode);
      for (const auto& s : samples) CHECK(membership(set, s));
    }
  }
  SUBCASE("boundary samples have unit norm for the unit ball") {
    UncertaintySet unit = UncertaintySet::identity(5, 1.0);
    auto samples = sample_disturbance(unit, 100, 3, SampleMode::Boundary);
    for (const auto& s : samples)
      CHECK(std::abs(s.norm() - 1.0) <= 1e-9);
  }
  SUBCASE("deterministic given the seed") {
    auto a = sample_disturbance(set, 10, 42, SampleMode::Interior);
    auto b = sample_disturbance(set, 10, 42, SampleMode::Interior);
    for (size_t i = 0; i < a.size(); ++i)
      CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("interior empirical max approaches the support value") {
    UncertaintySet unit = UncertaintySet::identity(4, 1.0);
    VectorXd e1 = VectorXd::Zero(4);
    e1[0] = 1.0;
    auto samples = sample_disturbance(unit, 100000, 11, SampleMode::Interior);
    double emp = -1e300;
    for (const auto& s : samples) emp = std::max(emp, e1.dot(s));
    CHECK(emp <= support_value(unit, e1) + 1e-12);
    CHECK(emp >= 0.99 * support_value(unit, e1));
  }
}

TEST_CASE("noise factorization") {
  SUBCASE("identity") {
    MatrixXd phi = factor_noise(MatrixXd::Identity(3, 3));
    CHECK((phi * phi.transpose() - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <
          1e-12);
  }
  SUBCASE("diagonal") {
    Eigen::Vector2d d(4.0, 9.0);
    MatrixXd phi = factor_noise(d.asDiagonal());
    CHECK((phi * phi.transpose() - MatrixXd(d.asDiagonal())).cwiseAbs().maxCoeff() <
          1e-12);
  }
  SUBCASE("random PSD reproduces the input") {
    Rng rng(3);
    MatrixXd A(8, 8);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) A(i, j) = rng.normal();
    MatrixXd sig = A * A.transpose();
    MatrixXd phi = factor_noise(sig);
    CHECK((phi * phi.transpose() - sig).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("singular PSD") {
    MatrixXd low = MatrixXd::Zero(3, 3);
    low(0, 0) = 2.0;  // rank 1
    MatrixXd phi = factor_noise(low);
    CHECK((phi * phi.transpose() - low).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("asymmetric input is rejected") {
    MatrixXd bad = MatrixXd::Zero(2, 2);
    bad(0, 1) = 1.0;
    CHECK_THROWS_AS(factor_noise(bad), std::invalid_argument);
  }
}

TEST_CASE("membership") {
  UncertaintySet set = UncertaintySet::identity(3, 1.0);
  CHECK(membership(set, VectorXd::Zero(3)));
  VectorXd far = VectorXd::Zero(3);
  far[0] = 2.0;
  CHECK_FALSE(membership(set, far));

  // Low-rank Gamma: zeta off the range is not a member.
  MatrixXd Gamma = MatrixXd::Zero(3, 1);
  Gamma(0, 0) = 1.0;
  UncertaintySet thin(Gamma, MatrixXd::Identity(1, 1), 1.0);
  VectorXd off = VectorXd::Zero(3);
  off[1] = 0.5;
  CHECK_FALSE(membership(thin, off));
  VectorXd on = VectorXd::Zero(3);
  on[0] = 0.5;
  CHECK(membership(thin, on));
}
