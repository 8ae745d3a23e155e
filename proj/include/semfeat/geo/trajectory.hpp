#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "semfeat/core/errors.hpp"

namespace semfeat::geo {

struct Trajectory {
  std::vector<Eigen::Vector3d> positions;
  std::vector<double> timestamps;  // empty, or one per position

  void validate() const {
    if (positions.empty()) throw ConfigError("trajectory has no points");
    if (!timestamps.empty() && timestamps.size() != positions.size())
      throw ShapeError("trajectory timestamps do not match positions");
    for (const auto& p : positions)
      if (!p.allFinite()) throw NumericError("trajectory contains non-finite coordinates");
  }
};

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  bool degenerate = false;  // reduced-rank point configuration, best-effort fit

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

// Closed-form least squares over s, R, t minimizing sum |s R p + t - q|^2
// (Umeyama's solution: centroids out, cross-covariance SVD, scale from the
// variance ratio). rigid pins s = 1 for trajectories with trusted scale.
inline SimilarityTransform align_trajectories(const Trajectory& estimated,
                                              const Trajectory& reference,
                                              bool rigid = false) {
  const auto& p = estimated.positions;
  const auto& q = reference.positions;
  if (p.size() != q.size())
    throw ShapeError("align_trajectories: length mismatch, " + std::to_string(p.size()) +
                     " vs " + std::to_string(q.size()));
  if (p.size() < 3) throw ConfigError("align_trajectories: need at least 3 points");
  const double n = double(p.size());

  Eigen::Vector3d mu_p = Eigen::Vector3d::Zero(), mu_q = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) {
    mu_p += p[i];
    mu_q += q[i];
  }
  mu_p /= n;
  mu_q /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_p = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Eigen::Vector3d dp = p[i] - mu_p;
    cov += (q[i] - mu_q) * dp.transpose();
    var_p += dp.squaredNorm();
  }
  cov /= n;
  var_p /= n;

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();

  SimilarityTransform t;
  t.degenerate = d(1) <= 1e-12 * std::max(1.0, d(0));

  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2) = -1;
  t.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  t.scale = (rigid || var_p <= 0) ? 1.0 : d.dot(s) / var_p;
  t.translation = mu_q - t.scale * (t.rotation * mu_p);
  return t;
}

inline double trajectory_rmse(const Trajectory& estimated, const Trajectory& reference,
                              const SimilarityTransform& t) {
  const auto& p = estimated.positions;
  const auto& q = reference.positions;
  if (p.size() != q.size())
    throw ShapeError("trajectory_rmse: length mismatch, " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  if (p.empty()) throw ConfigError("trajectory_rmse: empty trajectories");
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (t.apply(p[i]) - q[i]).squaredNorm();
  return std::sqrt(sum / double(p.size()));
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  traj.validate();
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  const bool with_t = !traj.timestamps.empty();
  f << (with_t ? "x,y,z,t\n" : "x,y,z\n");
  char buf[160];
  for (std::size_t i = 0; i < traj.positions.size(); ++i) {
    const auto& p = traj.positions[i];
    if (with_t)
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", p.x(), p.y(), p.z(),
                    traj.timestamps[i]);
    else
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.x(), p.y(), p.z());
    f << buf;
  }
  if (!f) throw IoError("short write to " + path.string());
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw IoError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool with_t = false;
  if (line == "x,y,z,t")
    with_t = true;
  else if (line != "x,y,z")
    throw IoError(path.string() + ": expected header x,y,z or x,y,z,t, got '" + line + "'");

  Trajectory traj;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    double v[4] = {0, 0, 0, 0};
    char comma = ',';
    const int want = with_t ? 4 : 3;
    for (int k = 0; k < want; ++k) {
      if (k && !(ss >> comma && comma == ','))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      if (!(ss >> v[k]))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    traj.positions.push_back({v[0], v[1], v[2]});
    if (with_t) traj.timestamps.push_back(v[3]);
  }
  traj.validate();
  return traj;
}

}  // namespace semfeat::geo
