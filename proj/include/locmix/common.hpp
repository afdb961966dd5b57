#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace locmix {

inline constexpr const char* lib_version = "0.1.0";

enum class Err {
  AllZeroMass,
  NonFinite,
  ZeroMassSubcube,
  IncompatiblePin,
  DegenerateCoordinate,
  NotAbsolutelyContinuous,
  NegativeInput,
  OutsideHull,
  MaxIterations,
  DimensionTooLarge,
  DegreeTooSmall,
  InvalidPinning,
  PreconditionViolated,
  NotFerromagnetic,
  SubsetTooLarge,
  ZeroStationaryRow,
  InsufficientSamples,
  NotReversible,
  DegenerateEntropy,
  Nonconvergence,
  BudgetExceeded,
  NoFreeCoordinates,
  StepTooLarge,
  ZeroDenominator,
  DomainError,
  NotDoobFinalScheme,
  NotInUniquenessRegime,
  NotUnique,
  NotStronglyConvex,
  TailMass,
  QuadratureFailure,
  ParseError,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::AllZeroMass: return "AllZeroMass";
    case Err::NonFinite: return "NonFinite";
    case Err::ZeroMassSubcube: return "ZeroMassSubcube";
    case Err::IncompatiblePin: return "IncompatiblePin";
    case Err::DegenerateCoordinate: return "DegenerateCoordinate";
    case Err::NotAbsolutelyContinuous: return "NotAbsolutelyContinuous";
    case Err::NegativeInput: return "NegativeInput";
    case Err::OutsideHull: return "OutsideHull";
    case Err::MaxIterations: return "MaxIterations";
    case Err::DimensionTooLarge: return "DimensionTooLarge";
    case Err::DegreeTooSmall: return "DegreeTooSmall";
    case Err::InvalidPinning: return "InvalidPinning";
    case Err::PreconditionViolated: return "PreconditionViolated";
    case Err::NotFerromagnetic: return "NotFerromagnetic";
    case Err::SubsetTooLarge: return "SubsetTooLarge";
    case Err::ZeroStationaryRow: return "ZeroStationaryRow";
    case Err::InsufficientSamples: return "InsufficientSamples";
    case Err::NotReversible: return "NotReversible";
    case Err::DegenerateEntropy: return "DegenerateEntropy";
    case Err::Nonconvergence: return "Nonconvergence";
    case Err::BudgetExceeded: return "BudgetExceeded";
    case Err::NoFreeCoordinates: return "NoFreeCoordinates";
    case Err::StepTooLarge: return "StepTooLarge";
    case Err::ZeroDenominator: return "ZeroDenominator";
    case Err::DomainError: return "DomainError";
    case Err::NotDoobFinalScheme: return "NotDoobFinalScheme";
    case Err::NotInUniquenessRegime: return "NotInUniquenessRegime";
    case Err::NotUnique: return "NotUnique";
    case Err::NotStronglyConvex: return "NotStronglyConvex";
    case Err::TailMass: return "TailMass";
    case Err::QuadratureFailure: return "QuadratureFailure";
    case Err::ParseError: return "ParseError";
  }
  return "Unknown";
}

struct Error : std::runtime_error {
  Err code;
  Error(Err c, const std::string& msg)
      : std::runtime_error(std::string(err_name(c)) + ": " + msg), code(c) {}
};

// CLI exit classes: 2 = parse/config, 3 = budget or infeasible precondition,
// 4 = numeric check failure.
inline int exit_class(Err e) {
  switch (e) {
    case Err::ParseError:
      return 2;
    case Err::BudgetExceeded:
    case Err::SubsetTooLarge:
    case Err::DimensionTooLarge:
    case Err::NotUnique:
    case Err::NotInUniquenessRegime:
    case Err::DegreeTooSmall:
    case Err::PreconditionViolated:
    case Err::NotFerromagnetic:
    case Err::NotDoobFinalScheme:
    case Err::NotStronglyConvex:
    case Err::InsufficientSamples:
      return 3;
    default:
      return 4;
  }
}

inline constexpr int kMaxCoords = 20;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic per-task stream: same (seed, task) pair always yields the same
// generator regardless of thread count or evaluation order.
inline std::mt19937_64 rng_stream(uint64_t seed, uint64_t task) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(~task)));
}

inline int thread_budget() {
  if (const char* s = std::getenv("LOCMIX_THREADS")) {
    int v = std::atoi(s);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

// Runs fn(i) for i in [0,n); work is split across threads but any shared
// output must be written indexed by i, keeping results order-deterministic.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int nt = std::min(thread_budget(), n);
  if (nt <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr eptr = nullptr;
  std::mutex emtx;
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(emtx);
          if (!eptr) eptr = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (eptr) std::rethrow_exception(eptr);
}

inline double logsumexp(const Eigen::VectorXd& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// All k-subsets of {0..n-1} as sorted index vectors, lexicographic.
inline std::vector<std::vector<int>> subsets_of_size(int n, int k) {
  std::vector<std::vector<int>> out;
  if (k < 0 || k > n) return out;
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  for (;;) {
    out.push_back(idx);
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

inline int spin_of_bit(uint32_t config, int bit) {
  return (config >> bit) & 1u ? +1 : -1;
}

inline double sq(double x) { return x * x; }

}  // namespace locmix
