#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "kernels.hpp"
#include "spectra.hpp"
#include "spin_measure.hpp"

namespace locmix {

enum class LocScheme { coordinate, stochastic, negative_fields };

inline const char* scheme_name(LocScheme s) {
  switch (s) {
    case LocScheme::coordinate: return "coordinate";
    case LocScheme::stochastic: return "stochastic";
    default: return "negative_fields";
  }
}

struct LocEvent {
  double time = 0;
  std::string kind;           // "pin" or "gauss"
  int coord = -1;             // full-coordinate index for pin events
  int spin = 0;
  Eigen::VectorXd increment;  // driver increment C*sqrt(dt)*g for gauss events
};

struct LocPath {
  LocScheme scheme = LocScheme::coordinate;
  std::vector<double> times;
  std::vector<SpinMeasure> states;
  std::vector<LocEvent> events;
  uint64_t seed = 0;
};

struct LocEnsemble {
  std::vector<double> weights;
  std::vector<SpinMeasure> members;
};

// re-index a function given on parent's free configs onto a submeasure of it
inline Eigen::VectorXd restrict_function(const SpinMeasure& parent,
                                         const SpinMeasure& member,
                                         const Eigen::VectorXd& vals) {
  if (vals.size() != parent.w.size())
    throw Error(Err::ParseError, "function size mismatch");
  if (member.n != parent.n) throw Error(Err::ParseError, "dimension mismatch");
  Eigen::VectorXd out(member.w.size());
  for (uint32_t fc = 0; fc < member.w.size(); ++fc) {
    uint32_t full = member.full_config(fc);
    uint32_t pfc = 0;
    for (int j = 0; j < parent.f(); ++j)
      if ((full >> parent.free_idx[j]) & 1u) pfc |= (1u << j);
    out[fc] = vals[pfc];
  }
  return out;
}

// exact law of the coordinate-by-coordinate state after t reveals: every
// (subset, revealed values) pair with weight nu_S(x_S)/C(f,t)
inline LocEnsemble coord_enumerate(const SpinMeasure& m, int t,
                                   uint64_t max_members = 200000) {
  int f = m.f();
  if (t < 0 || t > f) throw Error(Err::SubsetTooLarge, "need 0 <= t <= f");
  uint64_t count = binomial(f, t) << t;
  if (count > max_members)
    throw Error(Err::BudgetExceeded,
                "ensemble would have " + std::to_string(count) + " members");
  LocEnsemble ens;
  auto subsets = subsets_of_size(f, t);
  double inv = 1.0 / static_cast<double>(subsets.size());
  for (const auto& S : subsets) {
    uint32_t mask = 0;
    for (int j : S) mask |= (1u << j);
    for (uint32_t bits = 0; bits < (1u << t); ++bits) {
      uint32_t revealed = 0;
      for (int q = 0; q < t; ++q)
        if ((bits >> q) & 1u) revealed |= (1u << S[q]);
      double mass = 0;
      for (uint32_t fc = 0; fc < m.w.size(); ++fc)
        if ((fc & mask) == revealed) mass += m.w[fc];
      if (!(mass > 0)) continue;
      std::vector<int8_t> u(m.n, 0);
      for (int q = 0; q < t; ++q)
        u[m.free_idx[S[q]]] = static_cast<int8_t>((bits >> q) & 1u ? 1 : -1);
      ens.weights.push_back(mass * inv);
      ens.members.push_back(pin(m, u));
    }
  }
  return ens;
}

struct EnsembleCheck {
  double weight_sum = 0;
  double max_mixture_diff = 0;
};

inline EnsembleCheck validate_ensemble(const LocEnsemble& ens, const SpinMeasure& base) {
  EnsembleCheck c;
  Eigen::VectorXd mix = Eigen::VectorXd::Zero(Eigen::Index(1) << base.n);
  for (size_t k = 0; k < ens.members.size(); ++k) {
    c.weight_sum += ens.weights[k];
    mix += ens.weights[k] * full_weights(ens.members[k]);
  }
  Eigen::VectorXd bw = full_weights(base);
  c.max_mixture_diff = (mix - bw).cwiseAbs().maxCoeff();
  return c;
}

struct CoordStep {
  SpinMeasure next;
  Eigen::VectorXd z;  // full-length slope vector of the linear tilt
  int coord = -1;     // full-coordinate index
  int spin = 0;
};

// one step in the linear-tilt representation: uniform free coordinate, uniform
// threshold, slope z chosen so the update is exactly a pinning
inline CoordStep coord_sample_step(const SpinMeasure& m, std::mt19937_64& rng,
                                   double agree_tol = 1e-12) {
  int f = m.f();
  if (f == 0) throw Error(Err::NoFreeCoordinates, "all coordinates pinned");
  int kf = static_cast<int>(rng() % static_cast<uint64_t>(f));
  double u = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  double bk = 0;
  for (uint32_t fc = 0; fc < m.w.size(); ++fc)
    bk += m.w[fc] * spin_of_bit(fc, kf);
  CoordStep st;
  st.coord = m.free_idx[kf];
  st.z = Eigen::VectorXd::Zero(m.n);
  if (bk >= u) {
    st.spin = 1;
    st.z[st.coord] = 1.0 / (1.0 + bk);
  } else {
    st.spin = -1;
    st.z[st.coord] = -1.0 / (1.0 - bk);
  }
  st.next = pin_one(m, st.coord, st.spin);
  // multiplicative form nu*(1 + <x-b, z>) must reproduce the pinning exactly
  Eigen::VectorXd tw(m.w.size());
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
    double factor = 1.0 + (spin_of_bit(fc, kf) - bk) * st.z[st.coord];
    tw[fc] = m.w[fc] * std::max(factor, 0.0);
  }
  double mass = tw.sum();
  Eigen::VectorXd pw = full_weights(st.next);
  double worst = 0;
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
    double diff = std::abs(tw[fc] / mass - pw[m.full_config(fc)]);
    worst = std::max(worst, diff);
  }
  if (worst > agree_tol)
    throw Error(Err::PreconditionViolated,
                "tilt and pinning updates disagree by " + std::to_string(worst));
  return st;
}

inline LocPath coord_sample_path(const SpinMeasure& m, int steps, std::mt19937_64& rng) {
  if (steps < 0 || steps > m.f())
    throw Error(Err::SubsetTooLarge, "need 0 <= steps <= f");
  LocPath p;
  p.scheme = LocScheme::coordinate;
  p.times.push_back(0);
  p.states.push_back(m);
  for (int t = 0; t < steps; ++t) {
    CoordStep st = coord_sample_step(p.states.back(), rng);
    LocEvent ev;
    ev.time = t + 1;
    ev.kind = "pin";
    ev.coord = st.coord;
    ev.spin = st.spin;
    p.events.push_back(ev);
    p.times.push_back(t + 1);
    p.states.push_back(st.next);
  }
  return p;
}

struct VardecayCheck {
  double drop = 0;      // Var_t - E[Var_{t+1} | nu_t]
  double quad = 0;      // <v, Cov(Z) v>
  double diff = 0;
};

// one-step variance decay against the slope-covariance quadratic form
inline VardecayCheck vardecay_step_check(const SpinMeasure& m, const Eigen::VectorXd& phi) {
  int f = m.f();
  if (f == 0) throw Error(Err::NoFreeCoordinates, "all coordinates pinned");
  if (phi.size() != m.w.size()) throw Error(Err::ParseError, "function size mismatch");
  VardecayCheck c;
  double var0 = variance(m, phi);
  double expected = expected_post_localization(m, 1, phi, false);
  c.drop = var0 - expected;
  double mu = mean(m, phi);
  for (int j = 0; j < f; ++j) {
    double bj = 0, vj = 0;
    for (uint32_t fc = 0; fc < m.w.size(); ++fc) bj += m.w[fc] * spin_of_bit(fc, j);
    for (uint32_t fc = 0; fc < m.w.size(); ++fc)
      vj += m.w[fc] * (spin_of_bit(fc, j) - bj) * (phi[fc] - mu);
    double d = 1.0 - sq(bj);
    if (d > 0) c.quad += sq(vj) / d / f;
  }
  c.diff = std::abs(c.drop - c.quad);
  return c;
}

inline double default_sl_dt(const Eigen::MatrixXd& C) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  double op = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    op = std::max(op, std::abs(es.eigenvalues()[i]));
  return 1e-3 * std::min(1.0, 1.0 / std::max(sq(op), 1e-12));
}

struct SlResult {
  LocPath path;
  std::vector<double> step_residuals;  // |mass - 1| before renormalization
  double resid_rms = 0;
  double max_clip_frac = 0;
};

// Euler scheme on the density ratios over the finite support; each factor is
// linear and equals 1 at the center of mass, so mass is conserved up to
// clipping of negative values
inline SlResult sl_simulate(const SpinMeasure& m,
                            const std::function<Eigen::MatrixXd(double)>& C_of_t,
                            double dt, double T, std::mt19937_64& rng,
                            int checkpoints = 50, double clip_limit = 0.01,
                            bool record_events = true) {
  if (!(dt > 0) || !(T > 0)) throw Error(Err::ParseError, "need dt > 0 and T > 0");
  int f = m.f();
  if (f == 0) throw Error(Err::NoFreeCoordinates, "all coordinates pinned");
  long steps = std::max(1l, std::lround(T / dt));
  double h = T / static_cast<double>(steps);
  long stride = std::max(1l, steps / std::max(1, checkpoints));
  SlResult r;
  r.path.scheme = LocScheme::stochastic;
  r.path.times.push_back(0);
  r.path.states.push_back(m);
  Eigen::VectorXd cur = m.w;
  std::normal_distribution<double> gauss(0.0, 1.0);
  double sum_sq_resid = 0;
  for (long s = 0; s < steps; ++s) {
    double t = h * static_cast<double>(s);
    Eigen::MatrixXd C = C_of_t(t);
    if (C.rows() != f || C.cols() != f)
      throw Error(Err::ParseError, "driver matrix must be f x f");
    if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw Error(Err::PreconditionViolated, "driver matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    if (es.eigenvalues().minCoeff() < -1e-8)
      throw Error(Err::PreconditionViolated, "driver matrix not positive semidefinite");
    Eigen::VectorXd g(f);
    for (int j = 0; j < f; ++j) g[j] = gauss(rng);
    Eigen::VectorXd xi = std::sqrt(h) * (C * g);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(f);
    for (uint32_t fc = 0; fc < cur.size(); ++fc)
      for (int j = 0; j < f; ++j) b[j] += cur[fc] * spin_of_bit(fc, j);
    double clipped = 0, mass = 0;
    Eigen::VectorXd next(cur.size());
    for (uint32_t fc = 0; fc < cur.size(); ++fc) {
      double factor = 1.0;
      for (int j = 0; j < f; ++j) factor += (spin_of_bit(fc, j) - b[j]) * xi[j];
      if (factor < 0) {
        clipped += cur[fc];
        factor = 0;
      }
      next[fc] = cur[fc] * factor;
      mass += next[fc];
    }
    if (clipped > clip_limit)
      throw Error(Err::StepTooLarge,
                  "clipping hit " + std::to_string(clipped) + " of the mass; reduce dt");
    if (!(mass > 0)) throw Error(Err::StepTooLarge, "all mass clipped; reduce dt");
    r.max_clip_frac = std::max(r.max_clip_frac, clipped);
    double resid = std::abs(mass - 1.0);
    r.step_residuals.push_back(resid);
    sum_sq_resid += sq(resid);
    cur = next / mass;
    if (record_events) {
      LocEvent ev;
      ev.time = t + h;
      ev.kind = "gauss";
      ev.increment = xi;
      r.path.events.push_back(ev);
    }
    if ((s + 1) % stride == 0 || s + 1 == steps) {
      SpinMeasure tmp = m;
      tmp.w = cur;
      r.path.times.push_back(t + h);
      r.path.states.push_back(materialize(m.n, full_weights(tmp)));
    }
  }
  r.resid_rms = std::sqrt(sum_sq_resid / static_cast<double>(steps));
  return r;
}

struct FormFitReport {
  std::vector<double> times;
  std::vector<double> residuals;  // max affine-fit residual per recorded time
  double max_residual = 0;
  double scale = 1;               // max |log-ratio + t<x,Jx>| seen
  double max_relative = 0;
};

// the density ratio of the driven process should stay of the form
// exp(affine - t<x,Jx>) when the driver squares to 2J; fit the affine part out
inline FormFitReport sl_form_check(const LocPath& path, const Eigen::MatrixXd& J) {
  if (path.states.empty()) throw Error(Err::ParseError, "empty path");
  const SpinMeasure& base = path.states.front();
  int f = base.f();
  if (J.rows() != f || J.cols() != f)
    throw Error(Err::ParseError, "coupling matrix must be f x f");
  FormFitReport rep;
  for (size_t idx = 0; idx < path.states.size(); ++idx) {
    double t = path.times[idx];
    const SpinMeasure& st = path.states[idx];
    std::vector<double> ys;
    std::vector<uint32_t> cfgs;
    for (uint32_t fc = 0; fc < base.w.size(); ++fc) {
      double p0 = base.w[fc];
      double pt = st.weight_of_full(base.full_config(fc));
      if (!(p0 > 0) || !(pt > 0)) continue;
      Eigen::VectorXd x(f);
      for (int j = 0; j < f; ++j) x[j] = spin_of_bit(fc, j);
      double y = std::log(pt / p0) + t * x.dot(J * x);
      ys.push_back(y);
      cfgs.push_back(fc);
    }
    size_t rows = ys.size();
    if (rows == 0) continue;
    Eigen::MatrixXd X(rows, f + 1);
    Eigen::VectorXd Y(rows);
    for (size_t r = 0; r < rows; ++r) {
      X(r, 0) = 1.0;
      for (int j = 0; j < f; ++j) X(r, j + 1) = spin_of_bit(cfgs[r], j);
      Y[r] = ys[r];
      rep.scale = std::max(rep.scale, std::abs(ys[r]));
    }
    Eigen::VectorXd beta = X.colPivHouseholderQr().solve(Y);
    double resid = (Y - X * beta).cwiseAbs().maxCoeff();
    rep.times.push_back(t);
    rep.residuals.push_back(resid);
    rep.max_residual = std::max(rep.max_residual, resid);
  }
  rep.max_relative = rep.max_residual / rep.scale;
  return rep;
}

// negative-fields process for the drift curve v(t) = -t*1: between jumps the
// state is an exponential tilt of the pinned base, and a coordinate's pinning
// clock fires with instantaneous rate 1 + b_i(nu_t), pinning it to +1
inline LocPath nf_simulate(const SpinMeasure& m, double horizon, std::mt19937_64& rng,
                           double h_max = 0.05, double rate_tol = 0.01) {
  if (!(horizon > 0)) throw Error(Err::ParseError, "need horizon > 0");
  LocPath p;
  p.scheme = LocScheme::negative_fields;
  p.times.push_back(0);
  p.states.push_back(m);
  SpinMeasure cur = m;  // accumulates pins; tilt applied on evaluation
  auto state_at = [&](double t) {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(m.n, -t);
    return tilt(cur, v);
  };
  auto rates_at = [&](double t) {
    SpinMeasure st = state_at(t);
    Moments mo = moments(st);
    Eigen::VectorXd r(cur.f());
    for (int j = 0; j < cur.f(); ++j) r[j] = 1.0 + mo.b[cur.free_idx[j]];
    return r;
  };
  double t = 0;
  std::exponential_distribution<double> exp1(1.0);
  while (t < horizon - 1e-15 && cur.f() > 0) {
    int f = cur.f();
    Eigen::VectorXd target(f), lam = Eigen::VectorXd::Zero(f);
    for (int j = 0; j < f; ++j) target[j] = exp1(rng);
    Eigen::VectorXd r0 = rates_at(t);
    double h = h_max;
    bool jumped = false;
    while (t < horizon - 1e-15) {
      h = std::min(h, horizon - t);
      Eigen::VectorXd r1 = rates_at(t + h);
      double rel = 0;
      for (int j = 0; j < f; ++j)
        rel = std::max(rel, std::abs(r1[j] - r0[j]) / std::max(r0[j], 1e-2));
      if (rel > rate_tol && h > 1e-6) {
        h *= 0.5;
        continue;
      }
      // trapezoid hazard increment; solve the quadratic for clock crossings
      double best_theta = 2.0;
      int best_j = -1;
      for (int j = 0; j < f; ++j) {
        double dl = h * 0.5 * (r0[j] + r1[j]);
        if (lam[j] + dl < target[j]) continue;
        double a = 0.5 * h * (r1[j] - r0[j]);
        double bq = h * r0[j];
        double cq = lam[j] - target[j];
        double theta;
        if (std::abs(a) < 1e-14 * std::max(1.0, std::abs(bq))) {
          theta = bq > 0 ? -cq / bq : 1.0;
        } else {
          double disc = std::max(0.0, sq(bq) - 4.0 * a * cq);
          theta = (-bq + std::sqrt(disc)) / (2.0 * a);
        }
        theta = std::min(std::max(theta, 0.0), 1.0);
        if (theta < best_theta) {
          best_theta = theta;
          best_j = j;
        }
      }
      if (best_j >= 0) {
        t += best_theta * h;
        int coord = cur.free_idx[best_j];
        cur = pin_one(cur, coord, +1);
        LocEvent ev;
        ev.time = t;
        ev.kind = "pin";
        ev.coord = coord;
        ev.spin = 1;
        p.events.push_back(ev);
        p.times.push_back(t);
        p.states.push_back(state_at(t));
        jumped = true;
        break;
      }
      for (int j = 0; j < f; ++j) lam[j] += h * 0.5 * (r0[j] + r1[j]);
      t += h;
      r0 = rates_at(t);
      h = std::min(h * 1.5, h_max);
    }
    if (!jumped) break;
  }
  if (p.times.back() < horizon - 1e-15) {
    p.times.push_back(horizon);
    p.states.push_back(state_at(horizon));
  }
  return p;
}

// recompute the tilt-of-pinned form independently (other composition order)
// and compare with the recorded states
inline double nf_form_invariant_gap(const LocPath& p) {
  if (p.scheme != LocScheme::negative_fields)
    throw Error(Err::ParseError, "not a negative-fields path");
  const SpinMeasure& base = p.states.front();
  double worst = 0;
  for (size_t idx = 0; idx < p.states.size(); ++idx) {
    double t = p.times[idx];
    std::vector<int8_t> u(base.n, 0);
    for (const auto& ev : p.events)
      if (ev.kind == "pin" && ev.time <= t + 1e-15) u[ev.coord] = 1;
    Eigen::VectorXd v = Eigen::VectorXd::Constant(base.n, -t);
    SpinMeasure other = pin(tilt(base, v), u);
    double diff = (full_weights(other) - full_weights(p.states[idx])).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff);
  }
  return worst;
}

inline SpinMeasure state_at_time(const LocPath& p, double tau) {
  if (p.times.empty()) throw Error(Err::ParseError, "empty path");
  if (p.scheme == LocScheme::coordinate) {
    long idx = std::lround(tau);
    if (idx < 0 || idx >= static_cast<long>(p.states.size()))
      throw Error(Err::PreconditionViolated, "path does not reach requested time");
    return p.states[idx];
  }
  if (p.scheme == LocScheme::stochastic) {
    for (size_t i = 0; i < p.times.size(); ++i)
      if (std::abs(p.times[i] - tau) <= 1e-9) return p.states[i];
    throw Error(Err::PreconditionViolated, "no recorded state at requested time");
  }
  if (tau > p.times.back() + 1e-12)
    throw Error(Err::PreconditionViolated, "path does not reach requested time");
  const SpinMeasure& base = p.states.front();
  std::vector<int8_t> u(base.n, 0);
  for (const auto& ev : p.events)
    if (ev.kind == "pin" && ev.time <= tau + 1e-15) u[ev.coord] = 1;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(base.n, -tau);
  return pin(tilt(base, v), u);
}

struct KernelEstimate {
  std::vector<uint32_t> support;  // free configs of the base measure
  Eigen::MatrixXd P;
  Eigen::MatrixXd se;
  SpinMeasure base;
};

// empirical kernel P[x,y] = E[nu_tau(x) nu_tau(y)] / nu(x); the standard error
// of each entry is the jackknife value, which for a plain mean is s/sqrt(M)
inline KernelEstimate estimate_kernel_from_paths(const std::vector<LocPath>& paths,
                                                 double tau,
                                                 bool full_support = false) {
  if (paths.empty()) throw Error(Err::InsufficientSamples, "no paths given");
  const SpinMeasure& base = paths[0].states.front();
  KernelEstimate est;
  est.base = base;
  if (full_support) {
    for (uint32_t fc = 0; fc < base.w.size(); ++fc) est.support.push_back(fc);
  } else {
    est.support = kernel_support(base);
  }
  int s = static_cast<int>(est.support.size());
  for (int i = 0; i < s; ++i)
    if (!(base.w[est.support[i]] > 0))
      throw Error(Err::ZeroDenominator,
                  "base measure vanishes at support entry " + std::to_string(i));
  size_t M = paths.size();
  Eigen::MatrixXd mean_pp = Eigen::MatrixXd::Zero(s, s);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(s, s);
  size_t seen = 0;
  for (const auto& path : paths) {
    SpinMeasure st = state_at_time(path, tau);
    Eigen::VectorXd pvals(s);
    for (int i = 0; i < s; ++i)
      pvals[i] = st.weight_of_full(base.full_config(est.support[i]));
    ++seen;
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        double v = pvals[i] * pvals[j];
        double d = v - mean_pp(i, j);
        mean_pp(i, j) += d / static_cast<double>(seen);
        m2(i, j) += d * (v - mean_pp(i, j));
      }
  }
  est.P.resize(s, s);
  est.se.resize(s, s);
  for (int i = 0; i < s; ++i) {
    double denom = base.w[est.support[i]];
    for (int j = 0; j < s; ++j) {
      est.P(i, j) = mean_pp(i, j) / denom;
      double var = M > 1 ? m2(i, j) / static_cast<double>(M - 1) : 0.0;
      est.se(i, j) = std::sqrt(var / static_cast<double>(M)) / denom;
    }
  }
  return est;
}

struct ConservationTrace {
  std::vector<double> ratios;  // worst conditional one-step ratio per step
  std::vector<double> floors;
  bool certified = false;
  double cumulative_ratio = 1;
  double cumulative_floor = 1;
  double se = 0;  // nonzero for the Monte Carlo variants
};

// exact per-step conservation along the coordinate scheme; the variance floor
// uses the state's correlation spectral radius, the entropy floor needs a
// caller-supplied stability coefficient
inline ConservationTrace conservation_trace_coord(
    const SpinMeasure& m, int tau, const Eigen::VectorXd& phi, bool entropy_mode,
    const std::function<double(const SpinMeasure&)>& alpha_of_state = nullptr,
    uint64_t max_members = 200000) {
  int f = m.f();
  if (tau < 0 || tau > f) throw Error(Err::SubsetTooLarge, "need 0 <= tau <= f");
  ConservationTrace tr;
  double base_val = entropy_mode ? entropy_functional(m, phi) : variance(m, phi);
  if (!(base_val > 0)) throw Error(Err::DegenerateEntropy, "test function has no spread");
  tr.certified = !entropy_mode || static_cast<bool>(alpha_of_state);
  for (int t = 0; t < tau; ++t) {
    LocEnsemble ens = coord_enumerate(m, t, max_members);
    double worst_ratio = 1.0;
    double worst_kappa = 0.0;
    bool any = false;
    for (size_t k = 0; k < ens.members.size(); ++k) {
      const SpinMeasure& member = ens.members[k];
      if (member.f() == 0) continue;
      double kappa;
      if (entropy_mode) {
        kappa = alpha_of_state ? alpha_of_state(member) / (f - t) : 0.0;
      } else {
        kappa = influence_correlation(member).rho / (f - t);
      }
      worst_kappa = std::max(worst_kappa, kappa);
      Eigen::VectorXd pm = restrict_function(m, member, phi);
      double val = entropy_mode ? entropy_functional(member, pm) : variance(member, pm);
      if (val <= 1e-13 * std::max(1.0, base_val)) continue;
      double next = expected_post_localization(member, 1, pm, entropy_mode);
      worst_ratio = std::min(worst_ratio, next / val);
      any = true;
    }
    tr.ratios.push_back(any ? worst_ratio : 1.0);
    tr.floors.push_back(1.0 - worst_kappa);
    tr.cumulative_floor *= 1.0 - worst_kappa;
  }
  tr.cumulative_ratio = expected_post_localization(m, tau, phi, entropy_mode) / base_val;
  return tr;
}

// Monte Carlo entropy conservation along the driven process, with the decay
// floor exp(-int alpha) when a rate curve is supplied
inline ConservationTrace conservation_trace_sl(
    const SpinMeasure& m, const std::function<Eigen::MatrixXd(double)>& C_of_t,
    const Eigen::VectorXd& fvals, double T, double dt, int n_paths, uint64_t seed,
    const std::function<double(double)>& alpha_of_t = nullptr) {
  if (n_paths < 2) throw Error(Err::InsufficientSamples, "need at least 2 paths");
  double base_ent = entropy_functional(m, fvals);
  if (!(base_ent > 0)) throw Error(Err::DegenerateEntropy, "test function has no spread");
  std::vector<double> vals(n_paths);
  parallel_for(n_paths, [&](int k) {
    std::mt19937_64 rng = rng_stream(seed, static_cast<uint64_t>(k));
    SlResult r = sl_simulate(m, C_of_t, dt, T, rng, 1, 0.01, false);
    const SpinMeasure& fin = r.path.states.back();
    vals[k] = entropy_functional(fin, restrict_function(m, fin, fvals));
  });
  double mu = 0;
  for (double v : vals) mu += v;
  mu /= n_paths;
  double var = 0;
  for (double v : vals) var += sq(v - mu);
  var /= (n_paths - 1);
  ConservationTrace tr;
  tr.cumulative_ratio = mu / base_ent;
  tr.se = std::sqrt(var / n_paths) / base_ent;
  if (alpha_of_t) {
    int grid = 400;
    double acc = 0;
    for (int i = 0; i < grid; ++i) {
      double t0 = T * i / grid, t1 = T * (i + 1) / grid;
      acc += 0.5 * (alpha_of_t(t0) + alpha_of_t(t1)) * (t1 - t0);
    }
    tr.cumulative_floor = std::exp(-acc);
    tr.certified = true;
  }
  return tr;
}

inline ConservationTrace conservation_trace_nf(const SpinMeasure& m, double horizon,
                                               const Eigen::VectorXd& fvals, int n_paths,
                                               uint64_t seed, double alpha_h = -1) {
  if (n_paths < 2) throw Error(Err::InsufficientSamples, "need at least 2 paths");
  double base_ent = entropy_functional(m, fvals);
  if (!(base_ent > 0)) throw Error(Err::DegenerateEntropy, "test function has no spread");
  std::vector<double> vals(n_paths);
  parallel_for(n_paths, [&](int k) {
    std::mt19937_64 rng = rng_stream(seed, static_cast<uint64_t>(k));
    LocPath p = nf_simulate(m, horizon, rng);
    const SpinMeasure& fin = p.states.back();
    vals[k] = entropy_functional(fin, restrict_function(m, fin, fvals));
  });
  double mu = 0;
  for (double v : vals) mu += v;
  mu /= n_paths;
  double var = 0;
  for (double v : vals) var += sq(v - mu);
  var /= (n_paths - 1);
  ConservationTrace tr;
  tr.cumulative_ratio = mu / base_ent;
  tr.se = std::sqrt(var / n_paths) / base_ent;
  if (alpha_h >= 0) {
    tr.cumulative_floor = std::exp(-4.0 * alpha_h * horizon);
    tr.certified = true;
  }
  return tr;
}

inline std::string export_path_jsonl(const LocPath& p) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"scheme\":\"" << scheme_name(p.scheme) << "\",\"seed\":" << p.seed
     << ",\"n_states\":" << p.states.size() << "}\n";
  for (const auto& ev : p.events) {
    os << "{\"time\":" << ev.time << ",\"kind\":\"" << ev.kind << "\"";
    if (ev.coord >= 0) os << ",\"coord\":" << ev.coord << ",\"spin\":" << ev.spin;
    if (ev.increment.size() > 0) {
      os << ",\"increment\":[";
      for (Eigen::Index i = 0; i < ev.increment.size(); ++i) {
        if (i) os << ",";
        os << ev.increment[i];
      }
      os << "]";
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace locmix
