#include "rsteer/scenario.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "rsteer/rng.hpp"
#include "rsteer/uncertainty.hpp"

namespace rsteer::scenario {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument(path + ": " + what);
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

VectorXd get_vector(const json& j, const std::string& path, int expected = -1) {
  if (!j.is_array()) fail(path, "expected an array");
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i)
    v[i] = get_number(j[i], path + "[" + std::to_string(i) + "]");
  if (expected >= 0 && v.size() != expected)
    fail(path, "expected " + std::to_string(expected) + " entries");
  return v;
}

MatrixXd get_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a matrix (array of rows)");
  const size_t cols = j[0].size();
  MatrixXd m(j.size(), cols);
  for (size_t r = 0; r < j.size(); ++r) {
    VectorXd row = get_vector(j[r], path + "[" + std::to_string(r) + "]",
                              static_cast<int>(cols));
    m.row(r) = row;
  }
  return m;
}

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

// Template step matrices: 2D double integrator with dt = 0.05 and random,
// Frobenius-normalized disturbance input matrices drawn from the seed.
lifting::AgentDynamics double_integrator_2d(int T, int gamma_h,
                                            const VectorXd& x0, Rng& rng,
                                            json& frozen) {
  lifting::AgentDynamics dyn;
  dyn.T = T;
  dyn.gamma_h = gamma_h;
  dyn.x0_bar = x0;
  MatrixXd A(4, 4), B(4, 2);
  A << 1, 0, 0.05, 0, 0, 1, 0, 0.05, 0, 0, 1, 0, 0, 0, 0, 1;
  B << 0.0013, 0, 0, 0.0013, 0.05, 0, 0, 0.05;
  json cs = json::array();
  for (int k = 0; k < T; ++k) {
    MatrixXd C(4, 2);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) C(i, j) = rng.normal();
    C /= C.norm();
    cs.push_back(matrix_to_json(C));
    dyn.A.push_back(A);
    dyn.B.push_back(B);
    dyn.C.push_back(C);
    dyn.D.push_back(MatrixXd::Identity(4, 4));
  }
  frozen.push_back(std::move(cs));
  return dyn;
}

}  // namespace

Scenario parse_scenario(const json& doc) {
  Scenario sc;
  sc.name = doc.value("name", "scenario");
  if (!doc.contains("horizon")) fail("horizon", "missing");
  sc.T = doc["horizon"].get<int>();
  if (sc.T < 1) fail("horizon", "must be at least 1");
  sc.gamma_h = doc.value("gamma_h", sc.T);
  if (sc.gamma_h < 1 || sc.gamma_h > sc.T)
    fail("gamma_h", "must satisfy 1 <= gamma_h <= horizon");
  sc.seed = doc.value("seed", 0ULL);

  auto& prob = sc.problem;
  MatrixXd h_pos(2, 4);
  h_pos << 1, 0, 0, 0, 0, 1, 0, 0;
  prob.h_pos = h_pos;

  const json cost = doc.value("cost", json::object());
  prob.r_u = cost.value("r_u", 0.05);
  prob.r_k = cost.value("r_k", 0.05);

  const json thr = doc.value("thresholds", json::object());
  prob.c_interagent = thr.value("interagent", 0.25);
  const double obstacle_margin = thr.value("obstacle", 0.5);
  if (prob.c_interagent <= 0) fail("thresholds.interagent", "must be positive");
  if (obstacle_margin <= 0) fail("thresholds.obstacle", "must be positive");

  for (size_t o = 0; doc.contains("obstacles") && o < doc["obstacles"].size();
       ++o) {
    const json& jo = doc["obstacles"][o];
    const std::string path = "obstacles[" + std::to_string(o) + "]";
    admm::Obstacle ob;
    ob.center = get_vector(jo.at("center"), path + ".center", 2);
    const double radius = get_number(jo.at("radius"), path + ".radius");
    if (radius < 0) fail(path + ".radius", "must be nonnegative");
    ob.clearance = radius + obstacle_margin;
    prob.obstacles.push_back(std::move(ob));
  }

  if (!doc.contains("agents") || !doc["agents"].is_array() ||
      doc["agents"].empty())
    fail("agents", "at least one agent required");

  Rng rng(sc.seed);
  sc.frozen_inputs = json::array();
  for (size_t a = 0; a < doc["agents"].size(); ++a) {
    const json& ja = doc["agents"][a];
    const std::string path = "agents[" + std::to_string(a) + "]";

    VectorXd x0 = get_vector(ja.at("x0"), path + ".x0", 4);
    lifting::AgentDynamics dyn;
    const json jd = ja.value("dynamics", json("double_integrator_2d"));
    if (jd.is_string()) {
      if (jd.get<std::string>() != "double_integrator_2d")
        fail(path + ".dynamics", "unknown template '" +
                                     jd.get<std::string>() + "'");
      dyn = double_integrator_2d(sc.T, sc.gamma_h, x0, rng, sc.frozen_inputs);
    } else {
      dyn.T = sc.T;
      dyn.gamma_h = sc.gamma_h;
      dyn.x0_bar = x0;
      for (int k = 0; k < sc.T; ++k) {
        dyn.A.push_back(get_matrix(jd.at("A"), path + ".dynamics.A"));
        dyn.B.push_back(get_matrix(jd.at("B"), path + ".dynamics.B"));
        dyn.C.push_back(get_matrix(jd.at("C"), path + ".dynamics.C"));
        dyn.D.push_back(get_matrix(jd.at("D"), path + ".dynamics.D"));
      }
      sc.frozen_inputs.push_back(json::array());
    }
    try {
      dyn.validate();
    } catch (const std::exception& e) {
      fail(path + ".dynamics", e.what());
    }

    const json& ju = ja.at("uncertainty");
    const double tau = get_number(ju.at("tau"), path + ".uncertainty.tau");
    if (tau <= 0) fail(path + ".uncertainty.tau", "must be positive");
    MatrixXd Gamma, S;
    if (ju.contains("Gamma"))
      Gamma = get_matrix(ju["Gamma"], path + ".uncertainty.Gamma");
    else
      Gamma = MatrixXd::Identity(dyn.n_zeta(), dyn.n_zeta());
    if (ju.contains("S"))
      S = get_matrix(ju["S"], path + ".uncertainty.S");
    else
      S = MatrixXd::Identity(Gamma.cols(), Gamma.cols());
    std::unique_ptr<uncertainty::UncertaintySet> set;
    try {
      set = std::make_unique<uncertainty::UncertaintySet>(Gamma, S, tau);
    } catch (const std::exception& e) {
      fail(path + ".uncertainty", e.what());
    }
    if (set->n_zeta() != dyn.n_zeta())
      fail(path + ".uncertainty.Gamma", "row count must equal n_x + T n_d");

    admm::AgentProblem ag(*set);
    ag.dyn = dyn;
    ag.lift = lifting::build_lifted(dyn);
    const int ns = ag.lift.n_states();
    const int nx = dyn.nx();

    if (ja.contains("noise")) {
      const json& jn = ja["noise"];
      VectorXd istd = get_vector(jn.at("initial_std"), path + ".noise.initial_std", nx);
      VectorXd sstd = get_vector(jn.at("step_std"), path + ".noise.step_std",
                                 dyn.nw());
      MatrixXd sigma = MatrixXd::Zero(dyn.n_noise(), dyn.n_noise());
      sigma.topLeftCorner(nx, nx) = istd.cwiseAbs2().asDiagonal();
      for (int k = 0; k < sc.T; ++k)
        sigma.block(nx + k * dyn.nw(), nx + k * dyn.nw(), dyn.nw(), dyn.nw()) =
            sstd.cwiseAbs2().asDiagonal();
      ag.noise = uncertainty::NoiseModel::from_covariance(sigma);
      sc.has_noise = true;
    }

    if (ja.contains("target")) {
      const json& jt = ja["target"];
      VectorXd mean = get_vector(jt.at("mean"), path + ".target.mean", nx);
      VectorXd eps;
      if (jt.contains("epsilon") && jt["epsilon"].is_array())
        eps = get_vector(jt["epsilon"], path + ".target.epsilon", nx);
      else {
        eps = VectorXd::Constant(
            nx, jt.value("epsilon", std::numeric_limits<double>::infinity()));
      }
      for (int c = 0; c < nx; ++c) {
        constraints::MeanTargetBox t{VectorXd::Zero(ns), mean[c], eps[c]};
        t.a_bar[ns - nx + c] = 1.0;
        ag.targets.push_back(t);
      }
      ag.target_pos = prob.h_pos * mean;
    }

    for (size_t c = 0; ja.contains("constraints") && c < ja["constraints"].size();
         ++c) {
      const json& jc = ja["constraints"][c];
      const std::string cpath = path + ".constraints[" + std::to_string(c) + "]";
      const std::string type = jc.value("type", "");
      auto steps = [&](const json& jk) {
        std::vector<int> ks;
        if (jk.is_string()) {
          const std::string s = jk.get<std::string>();
          if (s == "terminal")
            ks.push_back(sc.T);
          else if (s == "all")
            for (int k = 1; k <= sc.T; ++k) ks.push_back(k);
          else
            fail(cpath + ".k", "expected an integer, 'terminal' or 'all'");
        } else {
          const int k = jk.get<int>();
          if (k < 0 || k > sc.T) fail(cpath + ".k", "step outside horizon");
          ks.push_back(k);
        }
        return ks;
      };
      if (type == "chance_linear") {
        const int coord = jc.at("coord").get<int>();
        const double sign = jc.value("sign", 1.0);
        const double bound = get_number(jc.at("bound"), cpath + ".bound");
        const double p = get_number(jc.at("p"), cpath + ".p");
        if (!(p > 0 && p < 0.5)) fail(cpath + ".p", "must lie in (0, 0.5)");
        if (coord < 0 || coord >= nx) fail(cpath + ".coord", "out of range");
        for (int k : steps(jc.at("k"))) {
          constraints::ChanceLinear cl;
          cl.a = VectorXd::Zero(ns);
          cl.a[k * nx + coord] = sign;
          cl.b = bound;
          cl.p = p;
          ag.chance.push_back(std::move(cl));
        }
      } else if (type == "covariance_bound") {
        VectorXd std_diag = get_vector(jc.at("std"), cpath + ".std", nx);
        for (int k : steps(jc.at("k"))) {
          constraints::CovarianceBound cb;
          cb.k = k;
          cb.sigma = std_diag.cwiseAbs2().asDiagonal();
          ag.covariance.push_back(std::move(cb));
        }
      } else if (type == "linear_mean") {
        const int coord = jc.at("coord").get<int>();
        const double sign = jc.value("sign", 1.0);
        const double bound = get_number(jc.at("bound"), cpath + ".bound");
        if (coord < 0 || coord >= nx) fail(cpath + ".coord", "out of range");
        for (int k : steps(jc.at("k"))) {
          constraints::LinearMean lm;
          lm.a = VectorXd::Zero(ns);
          lm.a[k * nx + coord] = sign;
          lm.b = bound;
          ag.linear_means.push_back(std::move(lm));
        }
      } else {
        fail(cpath + ".type", "unknown constraint type '" + type + "'");
      }
    }
    prob.agents.push_back(std::move(ag));
  }

  const int N = prob.n_agents();
  const json jn = doc.value("neighbors", json::object());
  if (jn.contains("adjacency")) {
    const json& adj = jn["adjacency"];
    if (!adj.is_array() || adj.size() != static_cast<size_t>(N))
      fail("neighbors.adjacency", "need one list per agent");
    prob.neighbors.resize(N);
    for (int i = 0; i < N; ++i)
      for (const auto& v : adj[i]) {
        const int j = v.get<int>();
        if (j < 0 || j >= N || j == i)
          fail("neighbors.adjacency[" + std::to_string(i) + "]",
               "invalid agent id " + std::to_string(j));
        prob.neighbors[i].push_back(j);
      }
  } else {
    const int k_nearest = std::min<int>(jn.value("k_nearest", N - 1), N - 1);
    prob.neighbors.assign(N, {});
    for (int i = 0; i < N; ++i) {
      std::vector<std::pair<double, int>> dist;
      for (int j = 0; j < N; ++j)
        if (j != i)
          dist.push_back({(prob.h_pos * (prob.agents[i].dyn.x0_bar -
                                         prob.agents[j].dyn.x0_bar))
                              .norm(),
                          j});
      std::sort(dist.begin(), dist.end());
      for (int q = 0; q < k_nearest && q < static_cast<int>(dist.size()); ++q)
        prob.neighbors[i].push_back(dist[q].second);
    }
  }
  prob.validate();
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open scenario file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("scenario parse error: ") +
                                e.what());
  }
  return parse_scenario(doc);
}

json policies_to_json(const std::vector<lifting::Policy>& pols) {
  json out;
  out["policies"] = json::array();
  for (const auto& p : pols) {
    json jp;
    jp["T"] = p.T();
    jp["nx"] = p.nx();
    jp["nu"] = p.nu();
    jp["gamma_h"] = p.gamma_h();
    json ub = json::array();
    for (int i = 0; i < p.u_bar().size(); ++i) ub.push_back(p.u_bar()[i]);
    jp["u_bar"] = std::move(ub);
    jp["K"] = matrix_to_json(p.K());
    out["policies"].push_back(std::move(jp));
  }
  return out;
}

std::vector<lifting::Policy> policies_from_json(const json& doc) {
  std::vector<lifting::Policy> out;
  for (const auto& jp : doc.at("policies")) {
    lifting::Policy p(jp.at("T").get<int>(), jp.at("nx").get<int>(),
                      jp.at("nu").get<int>(), jp.at("gamma_h").get<int>());
    const auto& ub = jp.at("u_bar");
    for (size_t i = 0; i < ub.size(); ++i)
      p.u_bar()[static_cast<int>(i)] = ub[i].get<double>();
    MatrixXd K = get_matrix(jp.at("K"), "policies.K");
    for (int k = 0; k < p.T(); ++k)
      for (int l = std::max(0, k - p.gamma_h() + 1); l <= k; ++l)
        p.set_gain_block(k, l,
                         K.block(k * p.nu(), l * p.nx(), p.nu(), p.nx()));
    out.push_back(std::move(p));
  }
  return out;
}

void save_policies(const std::vector<lifting::Policy>& pols,
                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << policies_to_json(pols).dump(1) << "\n";
}

std::vector<lifting::Policy> load_policies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open policy file: " + path);
  json doc;
  in >> doc;
  return policies_from_json(doc);
}

void write_trace_jsonl(const std::vector<admm::TracePoint>& trace,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& t : trace) {
    json line;
    line["iter"] = t.iter;
    line["primal"] = t.primal;
    line["dual"] = t.dual;
    line["max_agent_solve_ms"] = t.max_agent_solve_ms;
    out << line.dump() << "\n";
  }
}

}  // namespace rsteer::scenario
