#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "spin_measure.hpp"

namespace locmix {

// ---------------------------------------------------------------------------
// scalar divergences

inline double phi_fn(double s) {
  if (!(s >= -1.0)) throw Error(Err::DomainError, "phi needs s >= -1");
  if (s == -1.0) return 1.0;
  return (1.0 + s) * std::log1p(s) - s;
}

// one-coordinate divergence term; log1p keeps it exact at x == y
inline double h_scalar(double x, double y) {
  if (!(std::abs(x) <= 1.0)) throw Error(Err::DomainError, "h needs |x| <= 1");
  if (!(std::abs(y) < 1.0)) throw Error(Err::DomainError, "h needs |y| < 1");
  double a = x > -1.0 ? (1.0 + x) / 2 * std::log1p((x - y) / (1.0 + y)) : 0.0;
  double b = x < 1.0 ? (1.0 - x) / 2 * std::log1p((y - x) / (1.0 - y)) : 0.0;
  return a + b;
}

// sum of per-coordinate terms, counting only coordinates with |y_i| < 1
inline double h_divergence(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw Error(Err::ParseError, "h: size mismatch");
  double s = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double xi = x[i], yi = y[i];
    if (std::abs(xi) > 1.0 + 1e-12 || std::abs(yi) > 1.0 + 1e-12)
      throw Error(Err::DomainError, "coordinate " + std::to_string(i));
    xi = std::clamp(xi, -1.0, 1.0);
    yi = std::clamp(yi, -1.0, 1.0);
    if (std::abs(yi) < 1.0) s += h_scalar(xi, yi);
  }
  return s;
}

// two-sided comparison of the scalar divergence with the phi transform; the
// lower half and the eps-scaled bounds do NOT hold on the whole square (they
// break for y > 1/2 near x = y, ratio mid/H -> 1-y), so the report carries
// per-inequality flags and the worst grid points instead of a blanket verdict
struct HphiReport {
  int grid_points = 0;
  double min_lower_margin = 0;  // min of (1+y)phi(arg) - H/2 over the grid
  double lower_x = 0, lower_y = 0;
  double min_upper_margin = 0;  // min of 2H - (1+y)phi(arg)
  double upper_x = 0, upper_y = 0;
  double min_ratio = 0;  // range of (1+y)phi(arg)/H where H is not tiny
  double max_ratio = 0;
  std::vector<double> eps{1, 2, 5, 10};
  std::vector<double> eps_margins;  // min of eps(1+y)phi(arg/eps) - H/(4 eps)
  double min_abs_phi_margin = 0;    // min of phi(|s|) - phi(s)/3
  bool pass_lower = true;
  bool pass_upper = true;
  bool pass_eps = true;
  bool pass_phi3 = true;
  bool pass = true;
};

inline HphiReport lemma_hphi_check(int grid = 2001) {
  if (grid < 3) throw Error(Err::ParseError, "grid too small");
  HphiReport r;
  r.grid_points = grid;
  const double inf = std::numeric_limits<double>::infinity();
  r.min_lower_margin = r.min_upper_margin = inf;
  r.min_ratio = inf;
  r.max_ratio = -inf;
  r.eps_margins.assign(r.eps.size(), inf);
  // y strictly inside (-1,1), x including the endpoints
  for (int j = 0; j < grid; ++j) {
    double y = -1.0 + 2.0 * (j + 0.5) / grid;
    for (int i = 0; i < grid; ++i) {
      double x = -1.0 + 2.0 * i / (grid - 1);
      double h = h_scalar(x, y);
      double mid = (1.0 + y) * phi_fn((x - y) / (1.0 + y));
      if (mid - 0.5 * h < r.min_lower_margin) {
        r.min_lower_margin = mid - 0.5 * h;
        r.lower_x = x;
        r.lower_y = y;
      }
      if (2.0 * h - mid < r.min_upper_margin) {
        r.min_upper_margin = 2.0 * h - mid;
        r.upper_x = x;
        r.upper_y = y;
      }
      if (h > 1e-13) {
        r.min_ratio = std::min(r.min_ratio, mid / h);
        r.max_ratio = std::max(r.max_ratio, mid / h);
      }
      for (size_t k = 0; k < r.eps.size(); ++k) {
        double e = r.eps[k];
        double term = e * (1.0 + y) * phi_fn((x - y) / (e * (1.0 + y)));
        r.eps_margins[k] = std::min(r.eps_margins[k], term - h / (4.0 * e));
      }
    }
  }
  r.min_abs_phi_margin = inf;
  for (int i = 0; i < grid; ++i) {
    double s = -1.0 + 2.0 * i / (grid - 1);
    r.min_abs_phi_margin =
        std::min(r.min_abs_phi_margin, phi_fn(std::abs(s)) - phi_fn(s) / 3.0);
  }
  r.pass_lower = r.min_lower_margin >= -1e-12;
  r.pass_upper = r.min_upper_margin >= -1e-12;
  r.pass_phi3 = r.min_abs_phi_margin >= -1e-12;
  r.pass_eps = true;
  for (double mg : r.eps_margins) r.pass_eps = r.pass_eps && mg >= -1e-12;
  r.pass = r.pass_lower && r.pass_upper && r.pass_eps && r.pass_phi3;
  return r;
}

// ---------------------------------------------------------------------------
// certificates

enum class CertKind {
  SiPinnings,
  CorTilts,
  EntStabQuad,
  EntStabH,
  TameMarginals,
  BoundedMarginals,
};

inline const char* cert_kind_name(CertKind k) {
  switch (k) {
    case CertKind::SiPinnings: return "SI-pinnings";
    case CertKind::CorTilts: return "Cor-tilts";
    case CertKind::EntStabQuad: return "EntStab-quad";
    case CertKind::EntStabH: return "EntStab-H";
    case CertKind::TameMarginals: return "TameMarginals";
    case CertKind::BoundedMarginals: return "BoundedMarginals";
  }
  return "Unknown";
}

struct PsiSpec {
  bool is_h = false;
  Eigen::MatrixXd C;  // quad divergence 0.5*|C(x-y)|^2 when is_h is false
};

inline PsiSpec psi_h() {
  PsiSpec p;
  p.is_h = true;
  return p;
}

inline PsiSpec psi_quad(const Eigen::MatrixXd& C) {
  PsiSpec p;
  p.C = C;
  return p;
}

inline PsiSpec psi_quad_identity(int n) {
  return psi_quad(Eigen::MatrixXd::Identity(n, n));
}

struct Certificate {
  CertKind kind = CertKind::SiPinnings;
  double constant = 0;
  // pinning-quantified constants are exact enumerations; tilt-quantified ones
  // are sampled scans and therefore lower estimates of the true sup
  bool exhaustive = false;
  bool feasible = true;
  std::vector<int8_t> witness_u;  // full-length pinning request
  std::vector<int8_t> witness_w;  // second pinning for the marginal ratio
  int witness_i = -1;
  Eigen::VectorXd witness_v;  // full-length tilt
  std::string witness_kind;
  PsiSpec psi;  // entropic-stability kinds carry their divergence
  // scan metadata
  std::vector<double> radii;
  int directions = 0;
  uint64_t seed = 0;
  int ascent_accepts = 0;
  long items_scanned = 0;
  // split constants for the marginal certificates
  double ratio_constant = 0;
  double gap_constant = 0;
  // claim comparison
  bool has_claim = false;
  double claimed = 0;
  bool pass = true;
};

inline void apply_claim(Certificate& c, double claim) {
  c.has_claim = true;
  c.claimed = claim;
  c.pass = c.feasible && c.constant <= claim * (1 + 1e-12) + 1e-12;
}

namespace detail {

inline std::string jnum(double v) {
  if (!std::isfinite(v)) return v > 0 ? "\"inf\"" : (v < 0 ? "\"-inf\"" : "\"nan\"");
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

inline void jarr(std::ostringstream& o, const std::vector<int8_t>& v) {
  o << '[';
  for (size_t i = 0; i < v.size(); ++i) o << (i ? "," : "") << int(v[i]);
  o << ']';
}

inline void jarr(std::ostringstream& o, const std::vector<double>& v) {
  o << '[';
  for (size_t i = 0; i < v.size(); ++i) o << (i ? "," : "") << jnum(v[i]);
  o << ']';
}

inline void jarr(std::ostringstream& o, const Eigen::VectorXd& v) {
  o << '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) o << (i ? "," : "") << jnum(v[i]);
  o << ']';
}

}  // namespace detail

inline std::string certificate_json(const Certificate& c) {
  std::ostringstream o;
  o << "{\"kind\":\"" << cert_kind_name(c.kind) << "\"";
  o << ",\"constant\":" << detail::jnum(c.constant);
  o << ",\"quantifier\":\"" << (c.exhaustive ? "enumerated" : "sampled-scan") << "\"";
  o << ",\"feasible\":" << (c.feasible ? "true" : "false");
  o << ",\"witness\":{";
  bool first = true;
  auto key = [&](const char* k) {
    o << (first ? "\"" : ",\"") << k << "\":";
    first = false;
  };
  if (!c.witness_u.empty()) {
    key("u");
    detail::jarr(o, c.witness_u);
  }
  if (!c.witness_w.empty()) {
    key("w");
    detail::jarr(o, c.witness_w);
  }
  if (c.witness_i >= 0) {
    key("i");
    o << c.witness_i;
  }
  if (c.witness_v.size() > 0) {
    key("v");
    detail::jarr(o, c.witness_v);
  }
  if (!c.witness_kind.empty()) {
    key("cond");
    o << '"' << c.witness_kind << '"';
  }
  o << "}";
  o << ",\"scan\":{\"radii\":";
  detail::jarr(o, c.radii);
  o << ",\"directions\":" << c.directions;
  o << ",\"seed\":" << c.seed;
  o << ",\"ascent_accepts\":" << c.ascent_accepts;
  o << ",\"items_scanned\":" << c.items_scanned << "}";
  if (c.kind == CertKind::TameMarginals || c.kind == CertKind::BoundedMarginals) {
    o << ",\"ratio_constant\":" << detail::jnum(c.ratio_constant);
    o << ",\"gap_constant\":" << detail::jnum(c.gap_constant);
  }
  if (c.has_claim) o << ",\"claimed\":" << detail::jnum(c.claimed);
  o << ",\"pass\":" << (c.pass ? "true" : "false") << "}";
  return o.str();
}

// ---------------------------------------------------------------------------
// pinning enumeration

namespace detail {

// visits every pinning over the free coordinates whose subcube carries mass;
// configs holds the surviving free-config ids
template <class Visit>
inline void pinning_walk_rec(int f, int depth, std::vector<int8_t>& u,
                             std::vector<uint32_t>& configs, const Visit& visit) {
  if (depth == f) {
    visit(u, configs);
    return;
  }
  pinning_walk_rec(f, depth + 1, u, configs, visit);
  for (int s : {-1, +1}) {
    std::vector<uint32_t> sub;
    for (uint32_t c : configs)
      if (spin_of_bit(c, depth) == s) sub.push_back(c);
    if (sub.empty()) continue;
    u[depth] = static_cast<int8_t>(s);
    pinning_walk_rec(f, depth + 1, u, sub, visit);
  }
  u[depth] = 0;
}

template <class Visit>
inline void pinning_walk(const SpinMeasure& m, const Visit& visit) {
  int f = m.f();
  std::vector<uint32_t> configs;
  for (uint32_t c = 0; c < static_cast<uint32_t>(m.w.size()); ++c)
    if (m.w[c] > 0) configs.push_back(c);
  std::vector<int8_t> u(f, 0);
  pinning_walk_rec(f, 0, u, configs, visit);
}

// conditional stats for one pinning; coordinates forced to a single spin by
// the restriction get b = +-1 exactly and are excluded from live
struct PinStats {
  double mass = 0;
  Eigen::VectorXd b;  // length f, entries at pinned coords equal the pin
  std::vector<int> live;
  Eigen::MatrixXd cov_live;
};

inline PinStats pin_stats(const SpinMeasure& m, const std::vector<int8_t>& u,
                          const std::vector<uint32_t>& configs, bool want_cov) {
  int f = m.f();
  PinStats st;
  st.b = Eigen::VectorXd::Zero(f);
  uint32_t andm = ~0u, orm = 0;
  double W = 0;
  Eigen::VectorXd num = Eigen::VectorXd::Zero(f);
  for (uint32_t c : configs) {
    double w = m.w[c];
    W += w;
    andm &= c;
    orm |= c;
    for (int j = 0; j < f; ++j) num[j] += w * spin_of_bit(c, j);
  }
  st.mass = W;
  for (int j = 0; j < f; ++j) {
    if (u[j] != 0) {
      st.b[j] = u[j];
    } else if ((andm >> j) & 1u) {
      st.b[j] = 1.0;
    } else if (!((orm >> j) & 1u)) {
      st.b[j] = -1.0;
    } else {
      st.b[j] = num[j] / W;
      st.live.push_back(j);
    }
  }
  if (want_cov && !st.live.empty()) {
    int L = static_cast<int>(st.live.size());
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(L, L);
    for (uint32_t c : configs) {
      double w = m.w[c];
      for (int a = 0; a < L; ++a) {
        int sa = spin_of_bit(c, st.live[a]);
        for (int bb = 0; bb <= a; ++bb)
          s2(a, bb) += w * sa * spin_of_bit(c, st.live[bb]);
      }
    }
    st.cov_live.resize(L, L);
    for (int a = 0; a < L; ++a)
      for (int bb = 0; bb <= a; ++bb) {
        double v = s2(a, bb) / W - st.b[st.live[a]] * st.b[st.live[bb]];
        st.cov_live(a, bb) = v;
        st.cov_live(bb, a) = v;
      }
  }
  return st;
}

inline double rho_of_cov(const Eigen::MatrixXd& cov) {
  int L = static_cast<int>(cov.rows());
  if (L == 0) return 0.0;
  Eigen::VectorXd d = cov.diagonal();
  Eigen::MatrixXd cor(L, L);
  for (int a = 0; a < L; ++a)
    for (int b = 0; b < L; ++b) cor(a, b) = cov(a, b) / std::sqrt(d[a] * d[b]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cor);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline std::vector<int8_t> full_pinning(const SpinMeasure& m, const std::vector<int8_t>& u) {
  std::vector<int8_t> out(m.n, 0);
  for (int j = 0; j < m.f(); ++j) out[m.free_idx[j]] = u[j];
  return out;
}

}  // namespace detail

inline Certificate si_all_pinnings(const SpinMeasure& m, double claimed = -1,
                                   int max_f = 14) {
  int f = m.f();
  if (f > max_f)
    throw Error(Err::BudgetExceeded,
                "pinning enumeration over " + std::to_string(f) + " coordinates");
  Certificate c;
  c.kind = CertKind::SiPinnings;
  c.exhaustive = true;
  long items = 0;
  bool any = false;
  std::vector<int8_t> best_u;
  detail::pinning_walk(m, [&](const std::vector<int8_t>& u,
                              const std::vector<uint32_t>& cfgs) {
    ++items;
    detail::PinStats st = detail::pin_stats(m, u, cfgs, true);
    if (st.live.empty()) return;  // nothing left to correlate
    double rho = detail::rho_of_cov(st.cov_live);
    bool take = !any || rho > c.constant ||
                (rho == c.constant &&
                 std::lexicographical_compare(u.begin(), u.end(), best_u.begin(),
                                              best_u.end()));
    if (take) {
      any = true;
      c.constant = rho;
      best_u = u;
    }
  });
  c.items_scanned = items;
  if (any) c.witness_u = detail::full_pinning(m, best_u);
  if (claimed >= 0) apply_claim(c, claimed);
  return c;
}

struct EtaProfile {
  std::vector<double> eta;  // index = number of requested pins
  long pinnings = 0;
};

// worst conditional correlation radius per pinning level; levels where every
// pinning kills all randomness get the conservative value 1
inline EtaProfile si_eta_profile(const SpinMeasure& m, int max_f = 14) {
  int f = m.f();
  if (f > max_f)
    throw Error(Err::BudgetExceeded,
                "pinning enumeration over " + std::to_string(f) + " coordinates");
  EtaProfile p;
  p.eta.assign(std::max(f, 1), 0.0);
  std::vector<char> has(std::max(f, 1), 0);
  detail::pinning_walk(m, [&](const std::vector<int8_t>& u,
                              const std::vector<uint32_t>& cfgs) {
    ++p.pinnings;
    int level = 0;
    for (int8_t s : u) level += s != 0;
    if (level >= f) return;
    detail::PinStats st = detail::pin_stats(m, u, cfgs, true);
    if (st.live.empty()) return;
    double rho = detail::rho_of_cov(st.cov_live);
    has[level] = 1;
    p.eta[level] = std::max(p.eta[level], rho);
  });
  for (int i = 0; i < f; ++i)
    if (!has[i]) p.eta[i] = 1.0;
  return p;
}

inline double pinning_product_floor(const std::vector<double>& eta, int f, int l) {
  if (l < 1 || l > f) throw Error(Err::ParseError, "level out of range");
  double prod = 1.0;
  for (int i = 0; i + l < f; ++i) {
    if (i >= static_cast<int>(eta.size()))
      throw Error(Err::ParseError, "eta profile too short");
    prod *= std::max(0.0, 1.0 - eta[i] / (f - i));
  }
  return prod;
}

inline double uniform_product_floor(double kappa, int f, int l) {
  if (l < 1 || l > f) throw Error(Err::ParseError, "level out of range");
  double prod = 1.0;
  for (int i = 0; i + l < f; ++i) prod *= std::max(0.0, 1.0 - kappa / (f - i));
  return prod;
}

// ---------------------------------------------------------------------------
// tilt scans

struct TiltScan {
  std::vector<double> radii{0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  int directions = 200;
  uint64_t seed = 1;
  int ascent_rounds = 60;
  double ascent_step = 0.25;
  double ascent_min_step = 1e-4;
};

// unit directions in the free-coordinate space, deterministic per (seed, index)
inline std::vector<Eigen::VectorXd> tilt_scan_directions(int f, const TiltScan& s) {
  std::vector<Eigen::VectorXd> out(s.directions);
  for (int j = 0; j < s.directions; ++j) {
    auto rng = rng_stream(s.seed, j);
    std::normal_distribution<double> g(0, 1);
    Eigen::VectorXd d(f);
    double norm = 0;
    do {
      for (int i = 0; i < f; ++i) d[i] = g(rng);
      norm = d.norm();
    } while (norm < 1e-12);
    out[j] = d / norm;
  }
  return out;
}

inline std::vector<Eigen::VectorXd> tilt_scan_points(int f, const TiltScan& s) {
  auto dirs = tilt_scan_directions(f, s);
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(s.radii.size() * dirs.size());
  for (double r : s.radii)
    for (const auto& d : dirs) pts.push_back(r * d);
  return pts;
}

namespace detail {

inline Eigen::VectorXd full_from_free(const SpinMeasure& m, const Eigen::VectorXd& vf) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m.n);
  for (int j = 0; j < m.f(); ++j) v[m.free_idx[j]] = vf[j];
  return v;
}

template <class F>
inline void compass_ascend(Eigen::VectorXd& v, double& val, const F& eval,
                           const TiltScan& s, long& evals, int& accepts) {
  int f = static_cast<int>(v.size());
  double step = s.ascent_step;
  for (int round = 0; round < s.ascent_rounds; ++round) {
    bool improved = false;
    for (int j = 0; j < f; ++j)
      for (int sg = -1; sg <= 1; sg += 2) {
        Eigen::VectorXd v2 = v;
        v2[j] += sg * step;
        double val2 = eval(v2);
        ++evals;
        if (val2 > val + 1e-13 * std::max(1.0, std::abs(val))) {
          v = v2;
          val = val2;
          improved = true;
          ++accepts;
        }
      }
    if (!improved) {
      step *= 0.5;
      if (step < s.ascent_min_step) break;
    }
  }
}

// grid evaluation plus ascent from the top three grid points
template <class F>
inline Certificate run_tilt_scan(const SpinMeasure& m, CertKind kind,
                                 const TiltScan& scan, const F& eval_free,
                                 std::vector<Eigen::VectorXd> pts) {
  int f = m.f();
  Certificate c;
  c.kind = kind;
  c.radii = scan.radii;
  c.directions = scan.directions;
  c.seed = scan.seed;
  c.witness_v = Eigen::VectorXd::Zero(m.n);
  if (f == 0) return c;
  auto grid = tilt_scan_points(f, scan);
  pts.insert(pts.end(), grid.begin(), grid.end());
  std::vector<double> vals(pts.size());
  parallel_for(static_cast<int>(pts.size()),
               [&](int i) { vals[i] = eval_free(pts[i]); });
  long evals = static_cast<long>(pts.size());
  std::vector<int> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (vals[a] != vals[b]) return vals[a] > vals[b];
    return a < b;
  });
  int starts = std::min<int>(3, static_cast<int>(pts.size()));
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_v;
  int accepts = 0;
  for (int t = 0; t < starts; ++t) {
    Eigen::VectorXd v = pts[order[t]];
    double val = vals[order[t]];
    compass_ascend(v, val, eval_free, scan, evals, accepts);
    if (val > best) {
      best = val;
      best_v = v;
    }
  }
  c.constant = best;
  c.witness_v = full_from_free(m, best_v);
  c.items_scanned = evals;
  c.ascent_accepts = accepts;
  return c;
}

}  // namespace detail

inline Certificate cor_under_tilts(const SpinMeasure& m, const TiltScan& scan = {},
                                   double claimed = -1) {
  auto eval = [&](const Eigen::VectorXd& vf) {
    return influence_correlation(tilt(m, detail::full_from_free(m, vf))).rho;
  };
  std::vector<Eigen::VectorXd> extras;
  if (m.f() > 0) extras.push_back(Eigen::VectorXd::Zero(m.f()));
  Certificate c = detail::run_tilt_scan(m, CertKind::CorTilts, scan, eval, extras);
  if (claimed >= 0) apply_claim(c, claimed);
  return c;
}

// ---------------------------------------------------------------------------
// entropic stability

namespace detail {

inline Eigen::MatrixXd free_cov(const SpinMeasure& m) {
  int f = m.f();
  Moments mo = moments(m);
  Eigen::MatrixXd covf(f, f);
  for (int a = 0; a < f; ++a)
    for (int b = 0; b < f; ++b) covf(a, b) = mo.cov(m.free_idx[a], m.free_idx[b]);
  return covf;
}

// ratio of the divergence to the relative entropy as the tilt radius shrinks
// to zero along direction d: both are quadratic forms in Cov
inline double entstab_limit_ratio(const SpinMeasure& m, const PsiSpec& psi,
                                  const Eigen::VectorXd& dfree) {
  int f = m.f();
  if (f == 0) return 0.0;
  Eigen::MatrixXd covf = free_cov(m);
  Eigen::VectorXd u = covf * dfree;
  double den = dfree.dot(u);
  if (den <= 1e-14 * dfree.squaredNorm()) return 0.0;
  double num = 0;
  if (psi.is_h) {
    for (int a = 0; a < f; ++a) num += u[a] * u[a] / covf(a, a);
  } else {
    num = (psi.C * full_from_free(m, u)).squaredNorm();
  }
  return num / den;
}

// top direction of the limit ratio via the symmetrized pencil
inline std::pair<double, Eigen::VectorXd> entstab_limit_top(const SpinMeasure& m,
                                                            const PsiSpec& psi) {
  int f = m.f();
  if (f == 0) return {0.0, Eigen::VectorXd()};
  Eigen::MatrixXd covf = free_cov(m);
  Eigen::MatrixXd M(f, f);
  if (psi.is_h) {
    M.setZero();
    for (int a = 0; a < f; ++a) M(a, a) = 1.0 / covf(a, a);
  } else {
    Eigen::MatrixXd full = psi.C.transpose() * psi.C;
    for (int a = 0; a < f; ++a)
      for (int b = 0; b < f; ++b) M(a, b) = full(m.free_idx[a], m.free_idx[b]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covf);
  Eigen::VectorXd lam = es.eigenvalues();
  double lmax = lam.maxCoeff();
  Eigen::VectorXd sqv(f), isq(f);
  for (int i = 0; i < f; ++i) {
    double l = std::max(lam[i], 0.0);
    sqv[i] = std::sqrt(l);
    isq[i] = l > 1e-12 * std::max(lmax, 1e-300) ? 1.0 / std::sqrt(l) : 0.0;
  }
  Eigen::MatrixXd half =
      es.eigenvectors() * sqv.asDiagonal() * es.eigenvectors().transpose();
  Eigen::MatrixXd sandwich = half * M * half;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(sandwich);
  double top = es2.eigenvalues()[f - 1];
  Eigen::VectorXd y = es2.eigenvectors().col(f - 1);
  Eigen::VectorXd x =
      es.eigenvectors() * isq.asDiagonal() * es.eigenvectors().transpose() * y;
  if (x.norm() < 1e-12) return {0.0, Eigen::VectorXd()};
  return {top, Eigen::VectorXd(x.normalized())};
}

}  // namespace detail

inline double entstab_ratio(const SpinMeasure& m, const PsiSpec& psi,
                            const Eigen::VectorXd& v_full) {
  if (v_full.size() != m.n) throw Error(Err::ParseError, "tilt size mismatch");
  int f = m.f();
  Eigen::VectorXd vf(f);
  for (int j = 0; j < f; ++j) vf[j] = v_full[m.free_idx[j]];
  double r = vf.norm();
  if (r == 0) return 0.0;
  // tiny tilts go through the analytic second-order limit instead of 0/0
  if (r < 1e-3) return detail::entstab_limit_ratio(m, psi, vf / r);
  SpinMeasure tm = tilt(m, v_full);
  double kl = kl_divergence(tm, m);
  if (kl < 1e-12) return detail::entstab_limit_ratio(m, psi, vf / r);
  Eigen::VectorXd x = moments(tm).b, y = moments(m).b;
  double ps = psi.is_h ? h_divergence(x, y) : 0.5 * (psi.C * (x - y)).squaredNorm();
  return ps / kl;
}

inline Certificate entropic_stability_scan(const SpinMeasure& m, const PsiSpec& psi,
                                           const TiltScan& scan = {},
                                           double claimed = -1) {
  if (!psi.is_h && (psi.C.rows() != m.n || psi.C.cols() != m.n))
    throw Error(Err::ParseError, "quad divergence matrix must be n x n");
  auto eval = [&](const Eigen::VectorXd& vf) {
    return entstab_ratio(m, psi, detail::full_from_free(m, vf));
  };
  std::vector<Eigen::VectorXd> extras;
  if (m.f() > 0) {
    auto [lim, dir] = detail::entstab_limit_top(m, psi);
    (void)lim;
    if (dir.size() > 0) extras.push_back(1e-4 * dir);
  }
  Certificate c = detail::run_tilt_scan(
      m, psi.is_h ? CertKind::EntStabH : CertKind::EntStabQuad, scan, eval, extras);
  c.psi = psi;
  if (claimed >= 0) apply_claim(c, claimed);
  return c;
}

// ---------------------------------------------------------------------------
// marginal conditions

namespace detail {

inline double odds(double b) {
  if (b >= 1.0) return std::numeric_limits<double>::infinity();
  return (1.0 + b) / (1.0 - b);
}

}  // namespace detail

// tightest K so that pinning more coordinates multiplies the success odds of a
// free coordinate by at most K, and no pinning pushes any marginal above 1-1/K
inline Certificate tame_marginals_check(const SpinMeasure& m, double claimed_k = -1,
                                        int max_f = 10) {
  int f = m.f();
  if (f > max_f)
    throw Error(Err::BudgetExceeded,
                "pinning pairs over " + std::to_string(f) + " coordinates");
  long p3 = 1;
  for (int i = 0; i < f; ++i) p3 *= 3;
  std::vector<Eigen::VectorXd> marg(p3);
  std::vector<char> seen(p3, 0);
  long items = 0;
  detail::pinning_walk(m, [&](const std::vector<int8_t>& u,
                              const std::vector<uint32_t>& cfgs) {
    long code = 0, pw = 1;
    for (int j = 0; j < f; ++j) {
      code += (u[j] + 1) * pw;
      pw *= 3;
    }
    marg[code] = detail::pin_stats(m, u, cfgs, false).b;
    seen[code] = 1;
    ++items;
  });

  Certificate c;
  c.kind = CertKind::TameMarginals;
  c.exhaustive = true;
  double ratio_max = 0, gap_max = 0;
  long rcode_u = -1, rcode_w = -1;
  int ri = -1;
  long gcode = -1;
  int gi = -1;
  bool infeasible = false;
  long bad_u = -1, bad_w = -1;
  int bad_i = -1;
  std::string bad_kind;
  std::vector<long> pows(f + 1, 1);
  for (int j = 0; j < f; ++j) pows[j + 1] = pows[j] * 3;
  std::vector<int8_t> d(f);
  long pairs = 0;
  for (long code = 0; code < p3; ++code) {
    if (!seen[code]) continue;
    long rest = code;
    uint32_t mask = 0;
    for (int j = 0; j < f; ++j) {
      d[j] = static_cast<int8_t>(rest % 3 - 1);
      rest /= 3;
      if (d[j] != 0) mask |= 1u << j;
    }
    const Eigen::VectorXd& bp = marg[code];
    for (int j = 0; j < f; ++j) {
      if (d[j] != 0) continue;
      double b = bp[j];
      if (b >= 1.0) {
        if (!infeasible) {
          infeasible = true;
          bad_u = code;
          bad_w = -1;
          bad_i = j;
          bad_kind = "marginal_gap";
        }
        continue;
      }
      double gap = 1.0 / (1.0 - b);
      if (gap > gap_max) {
        gap_max = gap;
        gcode = code;
        gi = j;
      }
    }
    // every way of splitting this pinning into an inner request and the rest
    for (uint32_t sub = mask;; sub = (sub - 1) & mask) {
      long ucode = 0;
      for (int j = 0; j < f; ++j)
        if ((sub >> j) & 1u) ucode += (d[j] + 1) * pows[j];
        else ucode += pows[j];
      const Eigen::VectorXd& bu = marg[ucode];
      for (int j = 0; j < f; ++j) {
        if (d[j] != 0) continue;
        ++pairs;
        double xp = bp[j], xu = bu[j];
        if (xu >= 1.0) continue;  // already infeasible via the gap condition
        double ratio;
        if (xp >= 1.0) {
          if (!infeasible) {
            infeasible = true;
            bad_u = ucode;
            bad_w = code;
            bad_i = j;
            bad_kind = "odds_ratio";
          }
          continue;
        }
        if (xu <= -1.0) {
          // a coordinate dead under the weaker pinning stays dead: 0/0 reads 1
          ratio = xp <= -1.0 ? 1.0 : std::numeric_limits<double>::infinity();
          if (!std::isfinite(ratio)) {
            if (!infeasible) {
              infeasible = true;
              bad_u = ucode;
              bad_w = code;
              bad_i = j;
              bad_kind = "odds_ratio";
            }
            continue;
          }
        } else {
          ratio = ((1.0 + xp) * (1.0 - xu)) / ((1.0 - xp) * (1.0 + xu));
        }
        if (ratio > ratio_max) {
          ratio_max = ratio;
          rcode_u = ucode;
          rcode_w = code;
          ri = j;
        }
      }
      if (sub == 0) break;
    }
  }
  c.items_scanned = pairs;
  c.ratio_constant = ratio_max;
  c.gap_constant = gap_max;
  auto decode = [&](long code) {
    std::vector<int8_t> u(f);
    for (int j = 0; j < f; ++j) {
      u[j] = static_cast<int8_t>(code % 3 - 1);
      code /= 3;
    }
    return detail::full_pinning(m, u);
  };
  if (infeasible) {
    c.feasible = false;
    c.constant = std::numeric_limits<double>::infinity();
    c.witness_u = decode(bad_u);
    c.witness_i = bad_i >= 0 ? m.free_idx[bad_i] : -1;
    c.witness_kind = bad_kind;
    if (bad_w >= 0) {
      std::vector<int8_t> w = decode(bad_w);
      for (int i = 0; i < m.n; ++i)
        if (c.witness_u[i] != 0) w[i] = 0;
      c.witness_w = w;
    }
  } else {
    c.constant = std::max({1.0, ratio_max, gap_max});
    if (gap_max >= ratio_max && gcode >= 0) {
      c.witness_u = decode(gcode);
      c.witness_i = m.free_idx[gi];
      c.witness_kind = "marginal_gap";
    } else if (rcode_u >= 0) {
      c.witness_u = decode(rcode_u);
      std::vector<int8_t> w = decode(rcode_w);
      for (int i = 0; i < m.n; ++i)
        if (c.witness_u[i] != 0) w[i] = 0;
      c.witness_w = w;
      c.witness_i = m.free_idx[ri];
      c.witness_kind = "odds_ratio";
    }
  }
  if (claimed_k > 0) apply_claim(c, claimed_k);
  return c;
}

// sup of |b_i| over all pinnings; marginals are (1-constant)-bounded
inline Certificate bounded_marginals_check(const SpinMeasure& m, double claimed_b = -1,
                                           int max_f = 14) {
  int f = m.f();
  if (f > max_f)
    throw Error(Err::BudgetExceeded,
                "pinning enumeration over " + std::to_string(f) + " coordinates");
  Certificate c;
  c.kind = CertKind::BoundedMarginals;
  c.exhaustive = true;
  long items = 0;
  bool any = false;
  std::vector<int8_t> best_u;
  int best_i = -1;
  detail::pinning_walk(m, [&](const std::vector<int8_t>& u,
                              const std::vector<uint32_t>& cfgs) {
    ++items;
    detail::PinStats st = detail::pin_stats(m, u, cfgs, false);
    for (int j = 0; j < f; ++j) {
      if (u[j] != 0) continue;
      double v = std::abs(st.b[j]);
      bool take = !any || v > c.constant;
      if (!take && v == c.constant) {
        if (std::lexicographical_compare(u.begin(), u.end(), best_u.begin(),
                                         best_u.end()))
          take = true;
        else if (!std::lexicographical_compare(best_u.begin(), best_u.end(),
                                               u.begin(), u.end()))
          take = j < best_i;
      }
      if (take) {
        any = true;
        c.constant = v;
        best_u = u;
        best_i = j;
      }
    }
  });
  c.items_scanned = items;
  if (any) {
    c.witness_u = detail::full_pinning(m, best_u);
    c.witness_i = m.free_idx[best_i];
  }
  c.gap_constant = c.constant;
  c.feasible = c.constant < 1.0;
  if (claimed_b >= 0) {
    c.has_claim = true;
    c.claimed = claimed_b;
    c.pass = c.constant <= 1.0 - claimed_b + 1e-12;
  }
  return c;
}

// ---------------------------------------------------------------------------
// witness re-evaluation

inline double certificate_reevaluate(const SpinMeasure& m, const Certificate& c) {
  switch (c.kind) {
    case CertKind::SiPinnings:
      return influence_correlation(pin(m, c.witness_u)).rho;
    case CertKind::CorTilts:
      return influence_correlation(tilt(m, c.witness_v)).rho;
    case CertKind::EntStabQuad:
    case CertKind::EntStabH:
      return entstab_ratio(m, c.psi, c.witness_v);
    case CertKind::TameMarginals: {
      if (c.witness_kind == "marginal_gap") {
        double b = moments(pin(m, c.witness_u)).b[c.witness_i];
        double gap = 1.0 - b;
        return gap > 0 ? 1.0 / gap : std::numeric_limits<double>::infinity();
      }
      double bu = moments(pin(m, c.witness_u)).b[c.witness_i];
      std::vector<int8_t> combined = c.witness_u;
      for (int i = 0; i < m.n; ++i)
        if (combined[i] == 0 && i < static_cast<int>(c.witness_w.size()))
          combined[i] = c.witness_w[i];
      double bp = moments(pin(m, combined)).b[c.witness_i];
      if (bu <= -1.0 && bp <= -1.0) return 1.0;
      double den = detail::odds(bu), num = detail::odds(bp);
      if (!std::isfinite(num) || den == 0)
        return std::numeric_limits<double>::infinity();
      return num / den;
    }
    case CertKind::BoundedMarginals:
      return std::abs(moments(pin(m, c.witness_u)).b[c.witness_i]);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// analytic inequality checks

struct SitoeiReport {
  int points = 0;
  double alpha = 0, tame_k = 0, tame_c = 0;
  double margin_sq = 0;
  Eigen::VectorXd worst_v_sq;
  bool pass_sq = true;
  bool has_weighted = false;
  double margin_weighted = 0;
  Eigen::VectorXd worst_v_weighted;
  bool pass_weighted = true;
};

// mean shift under a tilt against the scale set by the pinning certificate
inline SitoeiReport lemma_sitoei_check(const SpinMeasure& m, double alpha,
                                       double tame_k = 0, double tame_c = 0,
                                       const TiltScan& scan = {}) {
  SitoeiReport r;
  r.alpha = alpha;
  r.tame_k = tame_k;
  r.tame_c = tame_c;
  r.has_weighted = tame_k >= 1 && tame_c >= 1;
  const double inf = std::numeric_limits<double>::infinity();
  r.margin_sq = inf;
  r.margin_weighted = inf;
  int f = m.f();
  Eigen::VectorXd b0 = moments(m).b;
  std::vector<Eigen::VectorXd> pts{Eigen::VectorXd::Zero(f)};
  auto grid = tilt_scan_points(f, scan);
  pts.insert(pts.end(), grid.begin(), grid.end());
  r.points = static_cast<int>(pts.size());
  std::vector<double> m1(pts.size()), m2(pts.size()), s2(pts.size());
  parallel_for(static_cast<int>(pts.size()), [&](int i) {
    Eigen::VectorXd v = detail::full_from_free(m, pts[i]);
    Eigen::VectorXd db = moments(tilt(m, v)).b - b0;
    double rhs = 16.0 * alpha * alpha * v.squaredNorm();
    m1[i] = rhs - db.squaredNorm();
    if (r.has_weighted) {
      double rhs2 = 0;
      for (int j = 0; j < m.n; ++j)
        rhs2 += 4.0 * alpha * tame_k * tame_k * tame_k * tame_c * (1.0 + b0[j]) *
                sq(v[j]) * std::exp(4.0 * std::abs(v[j]));
      m2[i] = rhs2 - v.dot(db);
      s2[i] = std::max(1.0, rhs2);
    }
  });
  for (size_t i = 0; i < pts.size(); ++i) {
    if (m1[i] < r.margin_sq) {
      r.margin_sq = m1[i];
      r.worst_v_sq = detail::full_from_free(m, pts[i]);
    }
    if (m1[i] < -1e-9 * std::max(1.0, 16.0 * alpha * alpha * pts[i].squaredNorm()))
      r.pass_sq = false;
    if (r.has_weighted) {
      if (m2[i] < r.margin_weighted) {
        r.margin_weighted = m2[i];
        r.worst_v_weighted = detail::full_from_free(m, pts[i]);
      }
      if (m2[i] < -1e-9 * s2[i]) r.pass_weighted = false;
    }
  }
  return r;
}

struct EisiReport {
  double si_alpha = 0;
  double quad_constant = 0, quad_bound = 0;
  bool quad_pass = false;
  bool marginals_feasible = false;
  bool has_h = false;
  double tame_k = 0, tame_c = 0;
  double h_constant = 0, h_bound = 0;
  bool h_pass = false;
  Certificate si, quad, h, tame;
};

// scanned stability constants against the multiples of the pinning constant
// they are implied by
inline EisiReport theorem_eisi_check(const SpinMeasure& m, const TiltScan& scan = {},
                                     int max_f = 10) {
  EisiReport r;
  r.si = si_all_pinnings(m, -1, max_f);
  r.si_alpha = std::max(1.0, r.si.constant);
  r.quad = entropic_stability_scan(m, psi_quad_identity(m.n), scan);
  r.quad_constant = r.quad.constant;
  r.quad_bound = 8.0 * r.si_alpha;
  r.quad_pass = r.quad_constant <= r.quad_bound * (1 + 1e-9);
  r.tame = tame_marginals_check(m, -1, std::min(max_f, 10));
  r.marginals_feasible = r.tame.feasible;
  if (r.tame.feasible) {
    r.has_h = true;
    r.tame_k = std::max(1.0, r.tame.ratio_constant);
    r.tame_c = std::max(1.0, r.tame.gap_constant);
    r.h = entropic_stability_scan(m, psi_h(), scan);
    r.h_constant = r.h.constant;
    r.h_bound = 768.0 * r.si_alpha * r.tame_k * r.tame_k * r.tame_k * r.tame_c;
    r.h_pass = r.h_constant <= r.h_bound * (1 + 1e-9);
  }
  return r;
}

struct LlentdeltaReport {
  int points = 0;
  double eps = 0;
  double margin_sq = 0;
  bool pass_sq = true;
  Eigen::VectorXd worst_v_sq;
  bool has_h = false;
  double c_eff = 0;
  double margin_h = 0;
  bool pass_h = true;
  Eigen::VectorXd worst_v_h;
};

// relative-entropy control of the mean shift: the squared form with eps=4*alpha
// and the per-coordinate divergence form with eps_i = max(2, 4 a K^3 C (1+b_i))
inline LlentdeltaReport lemma_llentdelta_check(const SpinMeasure& m, double alpha,
                                               double tame_k = 0, double tame_c = 0,
                                               const TiltScan& scan = {}) {
  LlentdeltaReport r;
  r.eps = 4.0 * alpha;
  r.has_h = tame_k >= 1 && tame_c >= 1;
  const double inf = std::numeric_limits<double>::infinity();
  r.margin_sq = inf;
  r.margin_h = inf;
  Eigen::VectorXd b0 = moments(m).b;
  if (r.has_h) {
    for (int j = 0; j < m.f(); ++j) {
      double bi = b0[m.free_idx[j]];
      double ei = std::max(2.0, 4.0 * alpha * tame_k * tame_k * tame_k * tame_c *
                                    (1.0 + bi));
      r.c_eff = std::max(r.c_eff, ei / (1.0 + bi));
    }
  }
  int f = m.f();
  std::vector<Eigen::VectorXd> pts{Eigen::VectorXd::Zero(f)};
  auto grid = tilt_scan_points(f, scan);
  pts.insert(pts.end(), grid.begin(), grid.end());
  r.points = static_cast<int>(pts.size());
  std::vector<double> m1(pts.size()), m2(pts.size()), scale1(pts.size());
  parallel_for(static_cast<int>(pts.size()), [&](int i) {
    Eigen::VectorXd v = detail::full_from_free(m, pts[i]);
    SpinMeasure tm = tilt(m, v);
    Eigen::VectorXd bt = moments(tm).b;
    double kl = kl_divergence(tm, m);
    m1[i] = r.eps * kl - (bt - b0).squaredNorm();
    scale1[i] = std::max(1.0, r.eps * kl);
    if (r.has_h) m2[i] = 192.0 * r.c_eff * kl - h_divergence(bt, b0);
  });
  for (size_t i = 0; i < pts.size(); ++i) {
    if (m1[i] < r.margin_sq) {
      r.margin_sq = m1[i];
      r.worst_v_sq = detail::full_from_free(m, pts[i]);
    }
    if (m1[i] < -1e-9 * scale1[i]) r.pass_sq = false;
    if (r.has_h) {
      if (m2[i] < r.margin_h) {
        r.margin_h = m2[i];
        r.worst_v_h = detail::full_from_free(m, pts[i]);
      }
      if (m2[i] < -1e-9 * std::max(1.0, 192.0 * r.c_eff)) r.pass_h = false;
    }
  }
  return r;
}

struct TiltmarginalsReport {
  double delta = 0;  // sup of 1 + b_i over all pinnings
  double odds_lo = 0, odds_hi = 0;
  bool odds_hi_finite = true;
  long checks = 0;
  // margins are relative to the envelope scale: strong tilts push the odds
  // to e^16-sized values where absolute slack is meaningless
  double margin_upper = 0;
  double margin_hi = 0, margin_lo = 0;
  bool pass = true;
};

// growth of pinned marginals under tilts against the exp(2 v_i) envelopes
inline TiltmarginalsReport lemma_tiltmarginals_check(const SpinMeasure& m,
                                                     const TiltScan& scan = {},
                                                     int max_f = 8) {
  int f = m.f();
  if (f > max_f)
    throw Error(Err::BudgetExceeded,
                "pinning enumeration over " + std::to_string(f) + " coordinates");
  TiltmarginalsReport r;
  const double inf = std::numeric_limits<double>::infinity();
  r.margin_upper = r.margin_hi = r.margin_lo = inf;
  r.odds_lo = inf;
  std::vector<std::vector<int8_t>> pins;
  detail::pinning_walk(m, [&](const std::vector<int8_t>& u,
                              const std::vector<uint32_t>& cfgs) {
    detail::PinStats st = detail::pin_stats(m, u, cfgs, false);
    for (int j = 0; j < f; ++j) {
      if (u[j] != 0) continue;
      r.delta = std::max(r.delta, 1.0 + st.b[j]);
      double o = detail::odds(st.b[j]);
      if (std::isfinite(o)) {
        r.odds_lo = std::min(r.odds_lo, o);
        r.odds_hi = std::max(r.odds_hi, o);
      } else {
        r.odds_hi_finite = false;
      }
    }
    pins.push_back(u);
  });
  std::vector<Eigen::VectorXd> pts{Eigen::VectorXd::Zero(f)};
  auto grid = tilt_scan_points(f, scan);
  pts.insert(pts.end(), grid.begin(), grid.end());
  std::vector<SpinMeasure> pinned(pins.size());
  std::vector<char> degenerate(pins.size(), 0);
  for (size_t k = 0; k < pins.size(); ++k) {
    SpinMeasure pm = pin(m, detail::full_pinning(m, pins[k]));
    degenerate[k] = pm.f() == 0;
    pinned[k] = std::move(pm);
  }
  std::mutex merge;
  parallel_for(static_cast<int>(pins.size()), [&](int k) {
    if (degenerate[k]) {
      // every coordinate forced: tilts cannot move anything, bounds are the
      // hypothesis constants themselves
      return;
    }
    double mu = inf, mh = inf, ml = inf;
    long ck = 0;
    for (const auto& vf : pts) {
      Eigen::VectorXd v = detail::full_from_free(m, vf);
      Eigen::VectorXd b = moments(tilt(pinned[k], v)).b;
      for (int j = 0; j < f; ++j) {
        if (pins[k][j] != 0) continue;
        int idx = m.free_idx[j];
        double vi = v[idx], bi = b[idx];
        ++ck;
        double cap = r.delta * std::exp(std::max(0.0, 2.0 * vi));
        mu = std::min(mu, (cap - (1.0 + bi)) / std::max(1.0, cap));
        double ob = detail::odds(bi);
        if (r.odds_hi_finite) {
          double hi = r.odds_hi * std::exp(std::max(0.0, 2.0 * vi));
          mh = std::min(mh, (hi - ob) / std::max(1.0, hi));
        }
        double lo = r.odds_lo * std::exp(std::min(0.0, 2.0 * vi));
        ml = std::min(ml, (ob - lo) / std::max(1.0, lo));
      }
    }
    std::lock_guard<std::mutex> lk(merge);
    r.margin_upper = std::min(r.margin_upper, mu);
    r.margin_hi = std::min(r.margin_hi, mh);
    r.margin_lo = std::min(r.margin_lo, ml);
    r.checks += ck;
  });
  r.pass = r.margin_upper >= -1e-8 && r.margin_lo >= -1e-8;
  if (r.odds_hi_finite) r.pass = r.pass && r.margin_hi >= -1e-8;
  return r;
}

// ---------------------------------------------------------------------------
// assembled entropy floor ingredient

struct ClvResult {
  double kappa = 0;
  std::vector<int8_t> witness_u;
  long pinnings = 0;
};

// worst divergence-form stability constant over all conditionings
inline ClvResult clv_kappa(const SpinMeasure& m, const TiltScan& scan = {},
                           int max_f = 10) {
  int f = m.f();
  if (f > max_f)
    throw Error(Err::BudgetExceeded,
                "pinning enumeration over " + std::to_string(f) + " coordinates");
  std::vector<std::vector<int8_t>> pins;
  detail::pinning_walk(m, [&](const std::vector<int8_t>& u,
                              const std::vector<uint32_t>&) { pins.push_back(u); });
  std::vector<double> vals(pins.size(), 0.0);
  parallel_for(static_cast<int>(pins.size()), [&](int k) {
    SpinMeasure pm = pin(m, detail::full_pinning(m, pins[k]));
    if (pm.f() == 0) return;
    vals[k] = entropic_stability_scan(pm, psi_h(), scan).constant;
  });
  ClvResult r;
  r.pinnings = static_cast<long>(pins.size());
  bool any = false;
  for (size_t k = 0; k < pins.size(); ++k) {
    bool take = !any || vals[k] > r.kappa ||
                (vals[k] == r.kappa &&
                 std::lexicographical_compare(pins[k].begin(), pins[k].end(),
                                              r.witness_u.begin(), r.witness_u.end()));
    if (take) {
      any = true;
      r.kappa = vals[k];
      r.witness_u = pins[k];
    }
  }
  if (any) r.witness_u = detail::full_pinning(m, r.witness_u);
  return r;
}

}  // namespace locmix
