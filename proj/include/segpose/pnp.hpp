#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "segpose/fusion.hpp"
#include "segpose/geometry.hpp"
#include "segpose/random.hpp"

namespace segpose {

struct RansacParams {
  int max_iterations = 300;
  double inlier_threshold_px = 5.0;
  std::size_t min_sample_size = 4;
  double confidence_stop = 0.999;
  std::uint64_t seed = 0;
  bool refine = true;
  int refine_iterations = 20;

  void validate() const {
    if (max_iterations < 1) throw Error(ErrorKind::ConfigError, "max_iterations must be >= 1");
    if (!(inlier_threshold_px > 0.0))
      throw Error(ErrorKind::ConfigError, "inlier_threshold_px must be positive");
    if (min_sample_size < 4) throw Error(ErrorKind::ConfigError, "min_sample_size must be >= 4");
    if (!(confidence_stop > 0.0 && confidence_stop <= 1.0))
      throw Error(ErrorKind::ConfigError, "confidence_stop must be in (0, 1]");
  }
};

struct PnpSolution {
  Pose pose;
  std::vector<std::uint8_t> inliers;  // one flag per input correspondence
  std::size_t inlier_count = 0;
  double mean_reproj_px = 0.0;        // over inliers
  int iterations = 0;
};

/// Per-point reprojection distance in pixels; +inf for points at non-positive depth.
inline std::vector<double> reprojection_errors(const Pose& pose, std::span<const Vec3> object,
                                               std::span<const Vec2> image,
                                               const CameraIntrinsics& k) {
  std::vector<double> err(object.size());
  for (std::size_t i = 0; i < object.size(); ++i) {
    const Vec3 c = pose.apply(object[i]);
    err[i] = c.z() > kMinDepth ? (project_camera_point(c, k) - image[i]).norm()
                               : std::numeric_limits<double>::infinity();
  }
  return err;
}

namespace detail {

// Least-squares rigid alignment dst ~ R * src + t (Kabsch, det(R) = +1).
inline Pose rigid_align(std::span<const Vec3> src, std::span<const Vec3> dst) {
  Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms += src[i];
    md += dst[i];
  }
  ms /= static_cast<double>(src.size());
  md /= static_cast<double>(dst.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - ms) * (dst[i] - md).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = orthonormalize(svd.matrixV() * d * svd.matrixU().transpose());
  return Pose(r, md - r * ms);
}

struct EpnpSystem {
  int control_count = 4;
  std::vector<Vec3> control_world;
  Eigen::MatrixXd alphas;     // n x control_count
  Eigen::MatrixXd kernel;     // 3*control_count x (up to 4), smallest eigenvalues first
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> dist2;  // squared world distances per pair
};

inline std::vector<Vec3> control_points_camera(const EpnpSystem& sys, const Eigen::VectorXd& betas) {
  std::vector<Vec3> out(static_cast<std::size_t>(sys.control_count), Vec3::Zero());
  for (Eigen::Index k = 0; k < betas.size(); ++k)
    for (int j = 0; j < sys.control_count; ++j)
      out[static_cast<std::size_t>(j)] += betas[k] * sys.kernel.col(k).segment<3>(3 * j);
  return out;
}

// Difference of kernel vector k between control points a and b.
inline Vec3 kernel_diff(const EpnpSystem& sys, Eigen::Index k, int a, int b) {
  return sys.kernel.col(k).segment<3>(3 * a) - sys.kernel.col(k).segment<3>(3 * b);
}

// Linearized distance constraints in the products beta_k * beta_l (k <= l).
inline Eigen::VectorXd linearized_betas(const EpnpSystem& sys, int n_kernel) {
  const int unknowns = n_kernel * (n_kernel + 1) / 2;
  const auto rows = static_cast<Eigen::Index>(sys.pairs.size());
  Eigen::MatrixXd l(rows, unknowns);
  Eigen::VectorXd rho(rows);
  for (Eigen::Index p = 0; p < rows; ++p) {
    const auto [a, b] = sys.pairs[static_cast<std::size_t>(p)];
    int col = 0;
    for (int k = 0; k < n_kernel; ++k) {
      const Vec3 dk = kernel_diff(sys, k, a, b);
      for (int m = k; m < n_kernel; ++m) {
        const Vec3 dm = kernel_diff(sys, m, a, b);
        l(p, col++) = (k == m ? 1.0 : 2.0) * dk.dot(dm);
      }
    }
    rho[p] = sys.dist2[static_cast<std::size_t>(p)];
  }
  const Eigen::VectorXd prod = l.colPivHouseholderQr().solve(rho);
  // prod = [b11, b12, ..., b1N, b22, ...]; read beta_1 from b11 and the
  // others' signs from the cross terms with beta_1.
  Eigen::VectorXd betas(n_kernel);
  betas[0] = std::sqrt(std::abs(prod[0]));
  int diag = n_kernel;  // index of b22
  for (int k = 1; k < n_kernel; ++k) {
    const double cross = prod[k];
    betas[k] = std::sqrt(std::abs(prod[diag])) * (cross < 0.0 ? -1.0 : 1.0);
    diag += n_kernel - k;
  }
  return betas;
}

// Keeps only the products beta_1 * beta_k, enough equations for any kernel size.
inline Eigen::VectorXd first_row_betas(const EpnpSystem& sys) {
  const auto nk = sys.kernel.cols();
  const auto rows = static_cast<Eigen::Index>(sys.pairs.size());
  Eigen::MatrixXd l(rows, nk);
  Eigen::VectorXd rho(rows);
  for (Eigen::Index p = 0; p < rows; ++p) {
    const auto [a, b] = sys.pairs[static_cast<std::size_t>(p)];
    const Vec3 d0 = kernel_diff(sys, 0, a, b);
    for (Eigen::Index m = 0; m < nk; ++m)
      l(p, m) = (m == 0 ? 1.0 : 2.0) * d0.dot(kernel_diff(sys, m, a, b));
    rho[p] = sys.dist2[static_cast<std::size_t>(p)];
  }
  const Eigen::VectorXd prod = l.colPivHouseholderQr().solve(rho);
  Eigen::VectorXd betas(nk);
  const double b1 = std::sqrt(std::abs(prod[0]));
  betas[0] = b1;
  for (Eigen::Index m = 1; m < nk; ++m) betas[m] = b1 > 0.0 ? prod[m] / b1 : 0.0;
  return betas;
}

inline std::vector<Vec3> viewing_rays(std::span<const Vec2> image, const CameraIntrinsics& k) {
  std::vector<Vec3> rays(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    rays[i] = Vec3((image[i].x() - k.cx) / k.fx, (image[i].y() - k.cy) / k.fy, 1.0);
  return rays;
}

// Kernel coordinates of the control points implied by putting point i at
// depth depths[i] on its viewing ray.
inline Eigen::VectorXd betas_from_depths(const EpnpSystem& sys, std::span<const Vec3> rays,
                                         std::span<const double> depths) {
  const auto m = static_cast<Eigen::Index>(sys.control_count);
  Eigen::MatrixXd cam(static_cast<Eigen::Index>(rays.size()), 3);
  for (std::size_t i = 0; i < rays.size(); ++i)
    cam.row(static_cast<Eigen::Index>(i)) = depths[i] * rays[i].transpose();
  const Eigen::MatrixXd ctrl = sys.alphas.colPivHouseholderQr().solve(cam);  // m x 3
  Eigen::VectorXd flat(3 * m);
  for (Eigen::Index j = 0; j < m; ++j) flat.segment<3>(3 * j) = ctrl.row(j).transpose();
  return sys.kernel.transpose() * flat;
}

// Every point at one common depth (weak perspective), scaled to match the
// world distances.
inline std::vector<double> weak_perspective_depths(std::span<const Vec3> object,
                                                   std::span<const Vec3> rays) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rays.size(); ++i)
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      const double dr = (rays[i] - rays[j]).norm();
      num += dr * (object[i] - object[j]).norm();
      den += dr * dr;
    }
  return std::vector<double>(rays.size(), den > 0.0 ? num / den : 1.0);
}

// Depths of the camera points for the given betas, mirrored about their mean.
// Distance constraints alone cannot tell a configuration from its depth
// reflection, so this seeds the other basin.
inline std::vector<double> reflected_depths(const EpnpSystem& sys, const Eigen::VectorXd& betas) {
  const auto ctrl = control_points_camera(sys, betas);
  const auto n = static_cast<std::size_t>(sys.alphas.rows());
  std::vector<double> z(n, 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < sys.control_count; ++j)
      z[i] += sys.alphas(static_cast<Eigen::Index>(i), j) * ctrl[static_cast<std::size_t>(j)].z();
    mean += z[i];
  }
  mean /= static_cast<double>(n);
  for (auto& v : z) v = 2.0 * mean - v;
  return z;
}

inline Eigen::VectorXd single_beta(const EpnpSystem& sys) {
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < sys.pairs.size(); ++p) {
    const auto [a, b] = sys.pairs[p];
    const double dv = kernel_diff(sys, 0, a, b).norm();
    num += dv * std::sqrt(sys.dist2[p]);
    den += dv * dv;
  }
  Eigen::VectorXd betas(1);
  betas[0] = den > 0.0 ? num / den : 0.0;
  return betas;
}

// Gauss-Newton on |sum_k beta_k dv_k|^2 - d^2 over all control-point pairs.
inline void polish_betas(const EpnpSystem& sys, Eigen::VectorXd& betas, int iterations) {
  const Eigen::Index nk = betas.size();
  const auto rows = static_cast<Eigen::Index>(sys.pairs.size());
  Eigen::MatrixXd j(rows, nk);
  Eigen::VectorXd r(rows);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index p = 0; p < rows; ++p) {
      const auto [a, b] = sys.pairs[static_cast<std::size_t>(p)];
      Vec3 v = Vec3::Zero();
      for (Eigen::Index k = 0; k < nk; ++k) v += betas[k] * kernel_diff(sys, k, a, b);
      r[p] = v.squaredNorm() - sys.dist2[static_cast<std::size_t>(p)];
      for (Eigen::Index k = 0; k < nk; ++k) j(p, k) = 2.0 * v.dot(kernel_diff(sys, k, a, b));
    }
    const Eigen::VectorXd step = j.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) return;
    betas += step;
    if (step.norm() <= 1e-14 * std::max(1.0, betas.norm())) return;
  }
}

inline EpnpSystem build_epnp_system(std::span<const Vec3> object, std::span<const Vec2> image,
                                    const CameraIntrinsics& k) {
  const std::size_t n = object.size();
  EpnpSystem sys;
  Vec3 c0 = Vec3::Zero();
  for (const auto& p : object) c0 += p;
  c0 /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (const auto& p : object) cov += (p - c0) * (p - c0).transpose();
  cov /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Mat3> pca(cov);
  const Vec3 lambda = pca.eigenvalues();  // ascending
  const Mat3 axes = pca.eigenvectors();
  if (!(lambda[2] > 0.0) || lambda[1] < 1e-8 * lambda[2])
    throw Error(ErrorKind::Degenerate, "object points are collinear");
  const bool planar = lambda[0] < 1e-8 * lambda[2];
  sys.control_count = planar ? 3 : 4;
  sys.control_world.push_back(c0);
  for (int a = 2; a >= (planar ? 1 : 0); --a)
    sys.control_world.push_back(c0 + std::sqrt(lambda[a]) * axes.col(a));

  const int m = sys.control_count;
  sys.alphas.resize(static_cast<Eigen::Index>(n), m);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = object[i] - c0;
    double rest = 1.0;
    for (int j = 1; j < m; ++j) {
      const Vec3 axis = sys.control_world[static_cast<std::size_t>(j)] - c0;
      const double a = axis.dot(d) / axis.squaredNorm();
      sys.alphas(static_cast<Eigen::Index>(i), j) = a;
      rest -= a;
    }
    sys.alphas(static_cast<Eigen::Index>(i), 0) = rest;
  }

  Eigen::MatrixXd mm(static_cast<Eigen::Index>(2 * n), 3 * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (image[i].x() - k.cx) / k.fx;
    const double y = (image[i].y() - k.cy) / k.fy;
    const auto r = static_cast<Eigen::Index>(2 * i);
    for (int j = 0; j < m; ++j) {
      const double a = sys.alphas(static_cast<Eigen::Index>(i), j);
      mm.row(r).segment<3>(3 * j) << a, 0.0, -a * x;
      mm.row(r + 1).segment<3>(3 * j) << 0.0, a, -a * y;
    }
  }
  const Eigen::MatrixXd mtm = mm.transpose() * mm;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mtm);
  const int kernel_dim = planar ? 3 : 4;
  sys.kernel = eig.eigenvectors().leftCols(kernel_dim);

  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) {
      sys.pairs.emplace_back(a, b);
      sys.dist2.push_back(
          (sys.control_world[static_cast<std::size_t>(a)] - sys.control_world[static_cast<std::size_t>(b)])
              .squaredNorm());
    }
  return sys;
}

struct EpnpCandidate {
  Pose pose;
  double error = std::numeric_limits<double>::infinity();
  bool valid = false;
};

inline EpnpCandidate pose_from_betas(const EpnpSystem& sys, Eigen::VectorXd betas,
                                     std::span<const Vec3> object, std::span<const Vec2> image,
                                     const CameraIntrinsics& k) {
  EpnpCandidate out;
  if (!betas.allFinite()) return out;
  auto ctrl = control_points_camera(sys, betas);
  std::vector<Vec3> cam(object.size(), Vec3::Zero());
  double zsum = 0.0;
  for (std::size_t i = 0; i < object.size(); ++i) {
    for (int j = 0; j < sys.control_count; ++j)
      cam[i] += sys.alphas(static_cast<Eigen::Index>(i), j) * ctrl[static_cast<std::size_t>(j)];
    zsum += cam[i].z();
  }
  if (zsum < 0.0)
    for (auto& c : cam) c = -c;
  Pose pose;
  try {
    pose = rigid_align(object, cam);
  } catch (const Error&) {
    return out;
  }
  const auto err = reprojection_errors(pose, object, image, k);
  double sum = 0.0;
  for (double e : err) {
    if (!std::isfinite(e)) return out;
    sum += e;
  }
  out.pose = pose;
  out.error = sum / static_cast<double>(err.size());
  out.valid = true;
  return out;
}

}  // namespace detail

/// EPnP with four (three for planar sets) control points.
///
/// Kernel dimensions 1 through 3 are solved by linearizing the control-point
/// distance constraints (dimension 4 starts from the dimension-3 betas), each
/// polished with Gauss-Newton on the betas. The candidate with the smallest
/// mean reprojection error and all depths positive wins.
inline Pose epnp(std::span<const Vec3> object, std::span<const Vec2> image,
                 const CameraIntrinsics& k) {
  if (object.size() != image.size())
    throw Error(ErrorKind::SpecMismatch, "object and image point counts differ");
  if (object.size() < 4) throw Error(ErrorKind::TooFew, "EPnP needs at least 4 correspondences");
  const auto sys = detail::build_epnp_system(object, image, k);
  const int max_dim = static_cast<int>(sys.kernel.cols());
  const auto pair_count = static_cast<int>(sys.pairs.size());

  detail::EpnpCandidate best;
  auto consider = [&](const Eigen::VectorXd& betas) {
    const auto cand = detail::pose_from_betas(sys, betas, object, image, k);
    if (cand.valid && cand.error < best.error) best = cand;
  };
  // Each initialization is polished twice: within its own kernel dimension,
  // and over the full kernel (the only exact route for minimal samples).
  auto polish_both = [&](const Eigen::VectorXd& init) {
    Eigen::VectorXd own = init;
    detail::polish_betas(sys, own, 10);
    consider(own);
    if (init.size() < max_dim) {
      Eigen::VectorXd full = Eigen::VectorXd::Zero(max_dim);
      full.head(own.size()) = own;
      detail::polish_betas(sys, full, 10);
      consider(full);
    }
  };
  for (int dim = 1; dim <= max_dim; ++dim) {
    if (dim == 1) {
      polish_both(detail::single_beta(sys));
    } else if (dim * (dim + 1) / 2 <= pair_count) {
      polish_both(detail::linearized_betas(sys, dim));
    }
  }
  if (max_dim == 4) polish_both(detail::first_row_betas(sys));
  {
    const auto rays = detail::viewing_rays(image, k);
    Eigen::VectorXd weak =
        detail::betas_from_depths(sys, rays, detail::weak_perspective_depths(object, rays));
    detail::polish_betas(sys, weak, 10);
    consider(weak);
    Eigen::VectorXd mirrored = detail::betas_from_depths(sys, rays, detail::reflected_depths(sys, weak));
    detail::polish_betas(sys, mirrored, 10);
    consider(mirrored);
  }
  if (!best.valid) throw Error(ErrorKind::CheiralityFailure, "no EPnP candidate has all depths positive");
  return best.pose;
}

inline std::vector<Vec3> object_points(std::span<const Correspondence> pairs) {
  std::vector<Vec3> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.object_point);
  return out;
}

inline std::vector<Vec2> image_points(std::span<const Correspondence> pairs) {
  std::vector<Vec2> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.image_point);
  return out;
}

inline Pose epnp(std::span<const Correspondence> pairs, const CameraIntrinsics& k) {
  return epnp(object_points(pairs), image_points(pairs), k);
}

inline double reprojection_sum_squares(const Pose& pose, std::span<const Vec3> object,
                                       std::span<const Vec2> image, const CameraIntrinsics& k) {
  double sum = 0.0;
  for (std::size_t i = 0; i < object.size(); ++i) {
    const Vec3 c = pose.apply(object[i]);
    if (!(c.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    sum += (project_camera_point(c, k) - image[i]).squaredNorm();
  }
  return sum;
}

/// Levenberg-Marquardt on the reprojection residuals. Rotation is updated
/// on the manifold, R <- exp(w) R; a step is kept only if it lowers the sum
/// of squares, so the cost never increases.
inline Pose refine_pose(const Pose& initial, std::span<const Vec3> object,
                        std::span<const Vec2> image, const CameraIntrinsics& k, int max_iters = 20) {
  if (object.size() != image.size())
    throw Error(ErrorKind::SpecMismatch, "object and image point counts differ");
  if (object.size() < 4) throw Error(ErrorKind::TooFew, "refinement needs at least 4 correspondences");
  Pose pose = initial;
  double cost = reprojection_sum_squares(pose, object, image, k);
  if (!std::isfinite(cost)) throw Error(ErrorKind::NonFinite, "initial reprojection residuals are not finite");

  const auto n = static_cast<Eigen::Index>(object.size());
  Eigen::MatrixXd jac(2 * n, 6);
  Eigen::VectorXd res(2 * n);
  double lambda = 1e-4;
  for (int it = 0; it < max_iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 rp = pose.rotation() * object[static_cast<std::size_t>(i)];
      const Vec3 c = rp + pose.translation();
      const double iz = 1.0 / c.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, 0.0, -k.fx * c.x() * iz * iz, 0.0, k.fy * iz, -k.fy * c.y() * iz * iz;
      Mat3 skew;
      skew << 0.0, -rp.z(), rp.y(), rp.z(), 0.0, -rp.x(), -rp.y(), rp.x(), 0.0;
      jac.block<2, 3>(2 * i, 0) = -dproj * skew;
      jac.block<2, 3>(2 * i, 3) = dproj;
      res.segment<2>(2 * i) = Vec2(k.fx * c.x() * iz + k.cx, k.fy * c.y() * iz + k.cy) -
                              image[static_cast<std::size_t>(i)];
    }
    const Eigen::Matrix<double, 6, 6> h = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> g = jac.transpose() * res;
    if (!g.allFinite()) throw Error(ErrorKind::NonFinite, "non-finite reprojection gradient");
    bool accepted = false;
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = h;
      a.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 6, 1> step = a.ldlt().solve(-g);
      if (!step.allFinite()) break;
      const Pose trial(orthonormalize(rotation_exp(step.head<3>()) * pose.rotation()),
                       pose.translation() + step.tail<3>());
      const double trial_cost = reprojection_sum_squares(trial, object, image, k);
      if (trial_cost < cost) {
        const double gain = cost - trial_cost;
        pose = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (gain <= 1e-16 * (1.0 + cost) && step.norm() < 1e-14) return pose;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return pose;
}

inline Pose refine_pose(const Pose& initial, std::span<const Correspondence> pairs,
                        const CameraIntrinsics& k, int max_iters = 20) {
  return refine_pose(initial, object_points(pairs), image_points(pairs), k, max_iters);
}

namespace detail {

inline double mean_over_inliers(std::span<const double> err, std::span<const std::uint8_t> mask) {
  double sum = 0.0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < err.size(); ++i)
    if (mask[i]) {
      sum += err[i];
      ++cnt;
    }
  return cnt ? sum / static_cast<double>(cnt) : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// RANSAC around EPnP.
///
/// Minimal samples cover `min_sample_size` distinct keypoints and are drawn
/// with probability proportional to confidence. Each iteration has its own
/// generator derived from (seed, iteration), so the result depends only on
/// the inputs. The best-consensus model is refit on its inliers with EPnP and
/// then refined (when enabled).
inline PnpSolution ransac_pnp(std::span<const Correspondence> pairs, const CameraIntrinsics& k,
                              const RansacParams& params = {}) {
  params.validate();
  const std::size_t n = pairs.size();
  const std::size_t s = params.min_sample_size;
  if (n < s) throw Error(ErrorKind::TooFew, "fewer correspondences than the minimal sample");
  std::vector<std::size_t> keypoint_ids;
  for (const auto& p : pairs) keypoint_ids.push_back(p.keypoint);
  std::sort(keypoint_ids.begin(), keypoint_ids.end());
  keypoint_ids.erase(std::unique(keypoint_ids.begin(), keypoint_ids.end()), keypoint_ids.end());
  if (keypoint_ids.size() < s)
    throw Error(ErrorKind::Degenerate, "correspondences cover fewer distinct keypoints than the sample size");

  const auto obj = object_points(pairs);
  const auto img = image_points(pairs);
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = std::max(pairs[i].confidence, 1e-3);

  const double threshold = params.inlier_threshold_px;
  std::vector<std::uint8_t> best_mask(n, 0), mask(n);
  std::size_t best_count = 0;
  double best_score = std::numeric_limits<double>::infinity();
  Pose best_pose;
  std::vector<std::size_t> sample;
  std::vector<Vec3> sample_obj(s);
  std::vector<Vec2> sample_img(s);
  std::vector<std::uint8_t> used_keypoint;
  std::size_t max_keypoint = keypoint_ids.back();
  int iterations = 0;

  for (int it = 0; it < params.max_iterations; ++it) {
    iterations = it + 1;
    Rng rng = make_rng(params.seed, static_cast<std::uint64_t>(it));
    used_keypoint.assign(max_keypoint + 1, 0);
    sample.clear();
    while (sample.size() < s) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!used_keypoint[pairs[i].keypoint]) total += weight[i];
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      std::size_t pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (used_keypoint[pairs[i].keypoint]) continue;
        pick = i;
        u -= weight[i];
        if (u < 0.0) break;
      }
      used_keypoint[pairs[pick].keypoint] = 1;
      sample.push_back(pick);
    }
    for (std::size_t j = 0; j < s; ++j) {
      sample_obj[j] = obj[sample[j]];
      sample_img[j] = img[sample[j]];
    }
    Pose hypothesis;
    try {
      hypothesis = epnp(sample_obj, sample_img, k);
    } catch (const Error&) {
      continue;
    }
    const auto err = reprojection_errors(hypothesis, obj, img, k);
    std::size_t count = 0;
    double score = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = err[i] < threshold;
      if (mask[i]) {
        ++count;
        score += err[i] * err[i];
      }
    }
    if (count > best_count || (count == best_count && count > 0 && score < best_score)) {
      best_count = count;
      best_score = score;
      best_mask = mask;
      best_pose = hypothesis;
    }
    const double w = static_cast<double>(best_count) / static_cast<double>(n);
    if (w >= 1.0) break;
    const double ws = std::pow(w, static_cast<double>(s));
    if (ws > 0.0) {
      const double needed = std::log(1.0 - params.confidence_stop) / std::log(1.0 - ws);
      if (static_cast<double>(it + 1) >= needed) break;
    }
  }
  if (best_count < s) throw Error(ErrorKind::NoConsensus, "no hypothesis reached the minimal consensus");

  std::vector<Vec3> in_obj;
  std::vector<Vec2> in_img;
  for (std::size_t i = 0; i < n; ++i)
    if (best_mask[i]) {
      in_obj.push_back(obj[i]);
      in_img.push_back(img[i]);
    }
  Pose pose = best_pose;
  try {
    const Pose refit = epnp(in_obj, in_img, k);
    if (reprojection_sum_squares(refit, in_obj, in_img, k) <=
        reprojection_sum_squares(pose, in_obj, in_img, k))
      pose = refit;
  } catch (const Error&) {
  }
  if (params.refine) pose = refine_pose(pose, in_obj, in_img, k, params.refine_iterations);

  PnpSolution sol;
  const auto err = reprojection_errors(pose, obj, img, k);
  sol.inliers.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    sol.inliers[i] = err[i] < threshold;
    sol.inlier_count += sol.inliers[i];
  }
  if (sol.inlier_count < s) {
    // Refit drifted away from the consensus; fall back to the hypothesis.
    pose = best_pose;
    const auto herr = reprojection_errors(pose, obj, img, k);
    sol.inlier_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sol.inliers[i] = herr[i] < threshold;
      sol.inlier_count += sol.inliers[i];
    }
    sol.mean_reproj_px = detail::mean_over_inliers(herr, sol.inliers);
  } else {
    sol.mean_reproj_px = detail::mean_over_inliers(err, sol.inliers);
  }
  sol.pose = pose;
  sol.iterations = iterations;
  return sol;
}

inline PnpSolution ransac_pnp(const CorrespondenceSet& set, const CameraIntrinsics& k,
                              const RansacParams& params = {}) {
  return ransac_pnp(std::span<const Correspondence>(set.pairs), k, params);
}

}  // namespace segpose
