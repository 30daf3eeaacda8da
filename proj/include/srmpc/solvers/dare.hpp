#pragma once

// Discrete algebraic Riccati equation by fixed-point iteration of the Riccati map.

#include <srmpc/core.hpp>

#include <Eigen/Eigenvalues>

namespace srmpc::solvers {

struct DareResult {
  Mat P;
  Mat K;  // u = -K x
  int iterations = 0;
};

/// One application of the Riccati map P -> Q + A'PA - A'PB (R + B'PB)^-1 B'PA.
inline Mat riccati_map(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P) {
  const Mat BtP = B.transpose() * P;
  const Mat S = R + BtP * B;
  const Mat G = S.ldlt().solve(BtP * A);
  Mat next = Q + A.transpose() * P * A - (BtP * A).transpose() * G;
  return 0.5 * (next + next.transpose());
}

inline double spectral_radius(const Mat& M) {
  if (M.size() == 0) return 0.0;
  return M.eigenvalues().cwiseAbs().maxCoeff();
}

inline DareResult dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, int max_iter = 200000) {
  const auto n = A.rows();
  require(A.cols() == n && B.rows() == n && Q.rows() == n && Q.cols() == n && R.rows() == B.cols() &&
              R.cols() == B.cols(),
          "dare: dimension mismatch");
  Eigen::LLT<Mat> rchk(R);
  require(rchk.info() == Eigen::Success, "dare: R must be positive definite");

  DareResult out;
  Mat P = Q;
  for (int it = 1; it <= max_iter; ++it) {
    Mat next = riccati_map(A, B, Q, R, P);
    if (!next.allFinite() || next.lpNorm<Eigen::Infinity>() > 1e14)
      fail(ErrorCode::NotStabilizable, "dare: Riccati iterates diverge");
    const double diff = (next - P).lpNorm<Eigen::Infinity>();
    P = std::move(next);
    if (diff < 1e-12 * std::max(1.0, P.lpNorm<Eigen::Infinity>())) {
      out.iterations = it;
      break;
    }
    if (it == max_iter) fail(ErrorCode::NotConverged, "dare: iteration cap reached");
  }
  // Polish with the closed-loop form Q + K'RK + Acl'P Acl (a sum of PSD terms, no cancellation) until the
  // residual stops improving; keep the best iterate. Large P leaves the residual at eps * |P| or so.
  auto residual = [&](const Mat& X) { return (riccati_map(A, B, Q, R, X) - X).lpNorm<Eigen::Infinity>(); };
  Mat best = P;
  double best_res = residual(P);
  for (int k = 0, stall = 0; k < 500 && stall < 30 && best_res > 0.0; ++k) {
    const Mat K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
    const Mat Acl = A - B * K;
    const Mat next = Q + K.transpose() * R * K + Acl.transpose() * P * Acl;
    P = 0.5 * (next + next.transpose());
    const double r = residual(P);
    if (r < best_res) {
      best_res = r;
      best = P;
      stall = 0;
    } else {
      ++stall;
    }
  }
  out.P = best;
  out.K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
  if (spectral_radius(A - B * out.K) >= 1.0)
    fail(ErrorCode::NotStabilizable, "dare: closed loop not strictly stable");
  return out;
}

}  // namespace srmpc::solvers
