#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "dhn/error.hpp"

namespace dhn::qp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// minimize 1/2 x'Px + q'x + constant   subject to   l <= Ax <= u
///
/// Equalities are rows with l == u; bounds on x are plain identity rows.
struct Problem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd l;
  Eigen::VectorXd u;
  double constant = 0.0;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_rows() const { return A.rows(); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x) + constant; }
};

struct Settings {
  double rho = 0.1;
  double sigma = 1e-6;
  double relax = 1.6;
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  double eps_infeasible = 1e-9;
  int max_iter = 40000;
  int check_every = 25;
  int scaling_iters = 15;
  bool adaptive_rho = true;
  bool polish = true;
  int refine_iters = 4;
};

struct Result {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  ///< multipliers of the rows of A
  double objective = 0.0;
  double primal_residual = 0.0;  ///< max violation of l <= Ax <= u
  double dual_residual = 0.0;    ///< ||Px + q + A'y||_inf
  int iterations = 0;
  bool polished = false;
};

namespace detail {

inline double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

inline double bound_violation(const Problem& p, const Eigen::VectorXd& x) {
  if (p.num_rows() == 0) return 0.0;
  const Eigen::VectorXd ax = p.A * x;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    worst = std::max({worst, p.l(i) - ax(i), ax(i) - p.u(i)});
  }
  return worst;
}

inline double stationarity(const Problem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Eigen::VectorXd g = p.P * x + p.q;
  if (p.num_rows() > 0) g += p.A.transpose() * y;
  return inf_norm(g);
}

/// Solves the equality-constrained KKT system over the guessed active rows.
/// Returns false when the guess is inconsistent (wrong multiplier signs or
/// violated inactive rows).
inline bool polish(const Problem& p, const Eigen::VectorXd& x_admm, const Eigen::VectorXd& y_admm,
                   const Settings& s, Result& out) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index m = p.num_rows();
  const Eigen::VectorXd ax = m > 0 ? Eigen::VectorXd(p.A * x_admm) : Eigen::VectorXd();

  std::vector<Eigen::Index> rows;
  std::vector<double> target;
  std::vector<int> side;  // -1 lower, +1 upper, 0 equality
  for (Eigen::Index i = 0; i < m; ++i) {
    if (p.l(i) == p.u(i)) {
      rows.push_back(i);
      target.push_back(p.l(i));
      side.push_back(0);
    } else if (ax(i) - p.l(i) < -y_admm(i)) {
      rows.push_back(i);
      target.push_back(p.l(i));
      side.push_back(-1);
    } else if (p.u(i) - ax(i) < y_admm(i)) {
      rows.push_back(i);
      target.push_back(p.u(i));
      side.push_back(1);
    }
  }
  const auto na = static_cast<Eigen::Index>(rows.size());
  const double delta = 1e-9;
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + na, n + na);
  kkt.topLeftCorner(n, n) = p.P;
  for (Eigen::Index r = 0; r < na; ++r) {
    kkt.block(n + r, 0, 1, n) = p.A.row(rows[static_cast<std::size_t>(r)]);
    kkt.block(0, n + r, n, 1) = p.A.row(rows[static_cast<std::size_t>(r)]).transpose();
  }
  Eigen::VectorXd rhs(n + na);
  rhs.head(n) = -p.q;
  for (Eigen::Index r = 0; r < na; ++r) rhs(n + r) = target[static_cast<std::size_t>(r)];

  Eigen::MatrixXd reg = kkt;
  reg.topLeftCorner(n, n).diagonal().array() += delta;
  reg.bottomRightCorner(na, na).diagonal().array() -= delta;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(reg);
  Eigen::VectorXd sol = lu.solve(rhs);
  for (int it = 0; it < s.refine_iters; ++it) sol += lu.solve(rhs - kkt * sol);
  if (!sol.allFinite()) return false;

  Eigen::VectorXd x = sol.head(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  for (Eigen::Index r = 0; r < na; ++r) {
    const double mult = sol(n + r);
    const int sd = side[static_cast<std::size_t>(r)];
    if ((sd < 0 && mult > 1e-9) || (sd > 0 && mult < -1e-9)) return false;
    y(rows[static_cast<std::size_t>(r)]) = mult;
  }
  const double scale = 1.0 + std::max(inf_norm(p.q), m > 0 ? inf_norm(p.u.cwiseAbs().cwiseMin(1e12)) : 0.0);
  const double prim = bound_violation(p, x);
  const double dual = stationarity(p, x, y);
  if (prim > 1e-9 * scale || dual > 1e-9 * scale) return false;

  out.x = x;
  out.y = y;
  out.primal_residual = std::max(0.0, prim);
  out.dual_residual = dual;
  out.objective = p.objective(x);
  out.polished = true;
  return true;
}

}  // namespace detail

/// OSQP-style ADMM with Ruiz equilibration, adaptive step size and a final
/// active-set polish.
inline Result solve(const Problem& prob, const Settings& s = {}) {
  const Eigen::Index n = prob.num_vars();
  const Eigen::Index m = prob.num_rows();
  if (prob.P.rows() != n || prob.P.cols() != n || prob.A.cols() != (m > 0 ? n : prob.A.cols()) ||
      prob.l.size() != m || prob.u.size() != m) {
    throw Error(ErrorKind::ShapeMismatch, "QP data has inconsistent dimensions");
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (prob.l(i) > prob.u(i)) {
      throw Error(ErrorKind::Infeasible, "row " + std::to_string(i) + " has lower bound above upper bound");
    }
  }

  // Ruiz equilibration of [P A'; A 0].
  Eigen::VectorXd D = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd E = Eigen::VectorXd::Ones(m);
  Eigen::MatrixXd P = prob.P;
  Eigen::VectorXd q = prob.q;
  Eigen::MatrixXd A = prob.A;
  for (int it = 0; it < s.scaling_iters; ++it) {
    Eigen::VectorXd dcol(n), ecol(m);
    for (Eigen::Index j = 0; j < n; ++j) {
      double norm = P.col(j).cwiseAbs().maxCoeff();
      if (m > 0) norm = std::max(norm, A.col(j).cwiseAbs().maxCoeff());
      dcol(j) = norm > 1e-12 ? 1.0 / std::sqrt(norm) : 1.0;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double norm = A.row(i).cwiseAbs().maxCoeff();
      ecol(i) = norm > 1e-12 ? 1.0 / std::sqrt(norm) : 1.0;
    }
    P = dcol.asDiagonal() * P * dcol.asDiagonal();
    q = dcol.asDiagonal() * q;
    if (m > 0) A = ecol.asDiagonal() * A * dcol.asDiagonal();
    D = D.cwiseProduct(dcol);
    E = E.cwiseProduct(ecol);
  }
  double cost_scale = 1.0;
  {
    double pn = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) pn += P.col(j).cwiseAbs().maxCoeff();
    pn = n > 0 ? pn / static_cast<double>(n) : 0.0;
    const double norm = std::max(pn, detail::inf_norm(q));
    if (norm > 1e-12) cost_scale = std::clamp(1.0 / norm, 1e-4, 1e4);
  }
  P *= cost_scale;
  q *= cost_scale;
  Eigen::VectorXd l = E.cwiseProduct(prob.l);
  Eigen::VectorXd u = E.cwiseProduct(prob.u);

  Eigen::VectorXd rho_vec(m);
  double rho = s.rho;
  auto set_rho = [&](double r) {
    rho = std::clamp(r, 1e-6, 1e6);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (l(i) == u(i)) {
        rho_vec(i) = 1e3 * rho;
      } else if (std::isinf(l(i)) && std::isinf(u(i))) {
        rho_vec(i) = 1e-6;
      } else {
        rho_vec(i) = rho;
      }
    }
  };
  set_rho(s.rho);

  Eigen::LLT<Eigen::MatrixXd> factor;
  auto refactor = [&]() {
    Eigen::MatrixXd K = P;
    K.diagonal().array() += s.sigma;
    if (m > 0) K.noalias() += A.transpose() * rho_vec.asDiagonal() * A;
    factor.compute(K);
    if (factor.info() != Eigen::Success) {
      throw Error(ErrorKind::DegenerateProblem, "ADMM linear system is not positive definite");
    }
  };
  refactor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd x_prev, y_prev;

  const Eigen::VectorXd Dinv = D.cwiseInverse();
  const Eigen::VectorXd Einv = E.cwiseInverse();
  Result res;
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= s.max_iter; ++iter) {
    x_prev = x;
    y_prev = y;
    Eigen::VectorXd rhs = s.sigma * x - q;
    if (m > 0) rhs += A.transpose() * (rho_vec.cwiseProduct(z) - y);
    const Eigen::VectorXd x_tilde = factor.solve(rhs);
    const Eigen::VectorXd z_tilde = m > 0 ? Eigen::VectorXd(A * x_tilde) : Eigen::VectorXd();
    x = s.relax * x_tilde + (1.0 - s.relax) * x_prev;
    if (m > 0) {
      const Eigen::VectorXd z_relax = s.relax * z_tilde + (1.0 - s.relax) * z;
      const Eigen::VectorXd z_new =
          (z_relax + y.cwiseQuotient(rho_vec)).cwiseMax(l).cwiseMin(u);
      y += rho_vec.cwiseProduct(z_relax - z_new);
      z = z_new;
    }

    if (iter % s.check_every != 0 && iter != s.max_iter) continue;

    const Eigen::VectorXd ax = m > 0 ? Eigen::VectorXd(A * x) : Eigen::VectorXd();
    const double prim = m > 0 ? detail::inf_norm(Einv.cwiseProduct(ax - z)) : 0.0;
    const Eigen::VectorXd px = P * x;
    const Eigen::VectorXd aty = m > 0 ? Eigen::VectorXd(A.transpose() * y) : Eigen::VectorXd::Zero(n);
    const double dual = detail::inf_norm(Dinv.cwiseProduct(px + q + aty)) / cost_scale;
    const double eps_prim =
        s.eps_abs + s.eps_rel * std::max(m > 0 ? detail::inf_norm(Einv.cwiseProduct(ax)) : 0.0,
                                         m > 0 ? detail::inf_norm(Einv.cwiseProduct(z)) : 0.0);
    const double eps_dual =
        s.eps_abs + s.eps_rel / cost_scale *
                        std::max({detail::inf_norm(Dinv.cwiseProduct(px)),
                                  detail::inf_norm(Dinv.cwiseProduct(aty)),
                                  detail::inf_norm(Dinv.cwiseProduct(q))});
    if (prim <= eps_prim && dual <= eps_dual) {
      converged = true;
      break;
    }

    // Primal infeasibility certificate.
    if (m > 0) {
      const Eigen::VectorXd dy = y - y_prev;
      const double dy_norm = detail::inf_norm(E.cwiseProduct(dy));
      if (dy_norm > 1e-30) {
        const double at_dy = detail::inf_norm(Dinv.cwiseProduct(A.transpose() * dy));
        double support = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (dy(i) > 0.0) support += std::isinf(u(i)) ? kInf : u(i) * dy(i);
          if (dy(i) < 0.0) support += std::isinf(l(i)) ? kInf : l(i) * dy(i);
        }
        if (at_dy <= s.eps_infeasible * dy_norm && support < -s.eps_infeasible * dy_norm) {
          throw Error(ErrorKind::Infeasible, "constraints admit no feasible point");
        }
      }
    }

    if (s.adaptive_rho && m > 0) {
      const double prim_n = prim / std::max(eps_prim, 1e-30);
      const double dual_n = dual / std::max(eps_dual, 1e-30);
      const double ratio = std::sqrt(prim_n / std::max(dual_n, 1e-30));
      if (ratio > 5.0 || ratio < 0.2) {
        set_rho(rho * ratio);
        refactor();
      }
    }
  }

  // Back to the original scaling.
  const Eigen::VectorXd x_out = D.cwiseProduct(x);
  const Eigen::VectorXd y_out = m > 0 ? Eigen::VectorXd(E.cwiseProduct(y) / cost_scale) : Eigen::VectorXd();
  res.x = x_out;
  res.y = y_out;
  res.iterations = std::min(iter, s.max_iter);
  res.objective = prob.objective(x_out);
  res.primal_residual = detail::bound_violation(prob, x_out);
  res.dual_residual = detail::stationarity(prob, x_out, y_out);

  if (s.polish) {
    Result polished = res;
    if (detail::polish(prob, x_out, y_out, s, polished)) return polished;
  }
  if (!converged) {
    throw Error(ErrorKind::MaxIterations,
                "ADMM did not converge in " + std::to_string(s.max_iter) + " iterations");
  }
  return res;
}

}  // namespace dhn::qp
