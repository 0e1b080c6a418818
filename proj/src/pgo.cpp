#include "toa_fusion/pgo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "toa_fusion/errors.hpp"

namespace toa_fusion {

namespace {

using Mat15x15 = Eigen::Matrix<double, 15, 15>;
using Vec15d = Eigen::Matrix<double, 15, 1>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

const KeyframeState& keyframe_at(const Values& values, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= values.keyframes.size()) {
    throw ConfigError("values do not cover keyframe " + std::to_string(index));
  }
  return values.keyframes[static_cast<std::size_t>(index)];
}

const Vec3& station_at(const Values& values, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= values.stations.size()) {
    throw ConfigError("values do not cover station " + std::to_string(index));
  }
  return values.stations[static_cast<std::size_t>(index)];
}

Eigen::MatrixXd whitener_from_cov(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (cov + cov.transpose()));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(NumericalError::Kind::kSingularNormalEquations,
                         "factor covariance is not positive definite");
  }
  const Eigen::Index n = cov.rows();
  return llt.matrixL().solve(Eigen::MatrixXd::Identity(n, n));
}

Eigen::Matrix<double, 15, 15> imu_factor_cov(const PreintegratedImu& pre, const Mat6& bias_cov) {
  Eigen::Matrix<double, 15, 15> c = Eigen::Matrix<double, 15, 15>::Zero();
  c.topLeftCorner<9, 9>() = pre.cov;
  c.bottomRightCorner<6, 6>() = bias_cov;
  return c;
}

Mat6 bias_walk_cov(const ImuNoiseParams& noise, double dt) {
  Vec6 d;
  d.head<3>().setConstant(noise.sigma_wg * noise.sigma_wg * dt);
  d.tail<3>().setConstant(noise.sigma_wa * noise.sigma_wa * dt);
  return d.asDiagonal();
}

/// Residual and unwhitened Jacobians of one factor.
LinearizedFactor evaluate(const Factor& factor, const Values& values, const Vec3& gravity, bool with_jacobians) {
  LinearizedFactor out;
  std::visit(
      Overloaded{
          [&](const PriorPoseFactor& f) {
            const KeyframeState& x = keyframe_at(values, f.keyframe);
            Vec6 r;
            r.head<3>() = log_so3(f.R.transpose() * x.R);
            r.tail<3>() = x.p - f.p;
            out.residual = r;
            if (with_jacobians) {
              Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, kf_idx::kDim);
              J.block<3, 3>(0, kf_idx::kTheta) = right_jacobian_inv(r.head<3>());
              J.block<3, 3>(3, kf_idx::kP) = Mat3::Identity();
              out.jacobians.push_back({{false, f.keyframe}, J});
            }
          },
          [&](const PriorVelocityFactor& f) {
            const KeyframeState& x = keyframe_at(values, f.keyframe);
            out.residual = x.v - f.v;
            if (with_jacobians) {
              Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, kf_idx::kDim);
              J.block<3, 3>(0, kf_idx::kV) = Mat3::Identity();
              out.jacobians.push_back({{false, f.keyframe}, J});
            }
          },
          [&](const PriorBiasFactor& f) {
            const KeyframeState& x = keyframe_at(values, f.keyframe);
            Vec6 r;
            r << x.b_g - f.bias.head<3>(), x.b_a - f.bias.tail<3>();
            out.residual = r;
            if (with_jacobians) {
              Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, kf_idx::kDim);
              J.block<6, 6>(0, kf_idx::kBg).setIdentity();
              out.jacobians.push_back({{false, f.keyframe}, J});
            }
          },
          [&](const ImuFactor& f) {
            const KeyframeState& xi = keyframe_at(values, f.keyframe_i);
            const KeyframeState& xj = keyframe_at(values, f.keyframe_j());
            const PreintegratedImu c = correct_bias(f.pre, f.bias_jac, xi.b_g, xi.b_a);
            Eigen::VectorXd r(15);
            r.head<9>() = imu_residual(c, xi, xj, gravity);
            r.tail<6>() = residual_bias(xi, xj);
            out.residual = r;
            if (with_jacobians) {
              const ImuResidualJacobians j = imu_residual_jacobians(f.pre, f.bias_jac, xi, xj, gravity);
              Eigen::MatrixXd Ji = Eigen::MatrixXd::Zero(15, kf_idx::kDim);
              Eigen::MatrixXd Jj = Eigen::MatrixXd::Zero(15, kf_idx::kDim);
              Ji.topRows<9>() = j.wrt_i;
              Jj.topRows<9>() = j.wrt_j;
              Ji.block<6, 6>(9, kf_idx::kBg) = -Mat6::Identity();
              Jj.block<6, 6>(9, kf_idx::kBg) = Mat6::Identity();
              out.jacobians.push_back({{false, f.keyframe_i}, Ji});
              out.jacobians.push_back({{false, f.keyframe_j()}, Jj});
            }
          },
          [&](const RangeFactor& f) {
            const KeyframeState& x = keyframe_at(values, f.keyframe);
            const Vec3& L = station_at(values, f.station);
            out.residual = Eigen::VectorXd::Constant(1, range_residual(x.p, L, f.distance));
            if (with_jacobians) {
              const Eigen::RowVector3d grad = range_residual_gradient(x.p, L);
              Eigen::MatrixXd Jk = Eigen::MatrixXd::Zero(1, kf_idx::kDim);
              Jk.block<1, 3>(0, kf_idx::kP) = grad;
              out.jacobians.push_back({{false, f.keyframe}, Jk});
              out.jacobians.push_back({{true, f.station}, -grad});
            }
          },
          [&](const StationPriorFactor& f) {
            out.residual = station_at(values, f.station) - f.position;
            if (with_jacobians) {
              out.jacobians.push_back({{true, f.station}, Eigen::MatrixXd::Identity(3, 3)});
            }
          },
          [&](const MarginalFactor& f) {
            const KeyframeState& x = keyframe_at(values, f.keyframe);
            const Vec15d r = local_difference(x, f.mean);
            out.residual = r;
            if (with_jacobians) {
              Eigen::MatrixXd J = Eigen::MatrixXd::Identity(15, kf_idx::kDim);
              J.block<3, 3>(kf_idx::kTheta, kf_idx::kTheta) = right_jacobian_inv(r.segment<3>(kf_idx::kTheta));
              out.jacobians.push_back({{false, f.keyframe}, J});
            }
          },
      },
      factor.data);
  return out;
}

/// Layout of the optimization vector for one graph.
struct Layout {
  int first_keyframe = 0;
  int num_keyframes = 0;
  int num_stations = 0;

  explicit Layout(const FactorGraph& graph)
      : first_keyframe(graph.keyframes.empty() ? 0 : graph.keyframes.front().index),
        num_keyframes(static_cast<int>(graph.keyframes.size())),
        num_stations(static_cast<int>(graph.stations.size())) {}

  int dim() const { return num_keyframes * kf_idx::kDim + num_stations * 3; }

  int offset(const VariableRef& v) const {
    if (v.is_station) {
      if (v.index < 0 || v.index >= num_stations) throw ConfigError("factor references unknown station");
      return num_keyframes * kf_idx::kDim + v.index * 3;
    }
    const int local = v.index - first_keyframe;
    if (local < 0 || local >= num_keyframes) {
      throw ConfigError("factor references keyframe " + std::to_string(v.index) + " outside the graph");
    }
    return local * kf_idx::kDim;
  }
};

Values apply_step(const Values& values, const Layout& layout, const Eigen::VectorXd& step) {
  Values out = values;
  for (int k = 0; k < layout.num_keyframes; ++k) {
    auto& x = out.keyframes[static_cast<std::size_t>(layout.first_keyframe + k)];
    x = retract(x, step.segment<kf_idx::kDim>(k * kf_idx::kDim));
  }
  for (int s = 0; s < layout.num_stations; ++s) {
    out.stations[static_cast<std::size_t>(s)] += step.segment<3>(layout.num_keyframes * kf_idx::kDim + s * 3);
  }
  return out;
}

double state_norm(const Values& values, const Layout& layout) {
  double sq = 0.0;
  for (int k = 0; k < layout.num_keyframes; ++k) {
    const auto& x = values.keyframes[static_cast<std::size_t>(layout.first_keyframe + k)];
    sq += x.p.squaredNorm() + x.v.squaredNorm() + x.b_g.squaredNorm() + x.b_a.squaredNorm() +
          log_so3(x.R).squaredNorm();
  }
  for (int s = 0; s < layout.num_stations; ++s) sq += values.stations[static_cast<std::size_t>(s)].squaredNorm();
  return std::sqrt(sq);
}


/// Normal equations of a graph whose keyframes couple only to their
/// neighbours and to the stations: block-tridiagonal in the keyframes plus a
/// dense station border. Solved by block elimination along the chain followed
/// by the station Schur complement.
class NormalEquations {
  using Border = Eigen::Matrix<double, Eigen::Dynamic, 15>;

 public:
  explicit NormalEquations(const Layout& layout)
      : layout_(layout),
        n_kf_(layout.num_keyframes),
        n_st_(3 * layout.num_stations),
        diag_(static_cast<std::size_t>(n_kf_)),
        lower_(static_cast<std::size_t>(std::max(n_kf_ - 1, 0))),
        border_(static_cast<std::size_t>(n_kf_), Border::Zero(n_st_, kf_idx::kDim)),
        corner_(Eigen::MatrixXd::Zero(n_st_, n_st_)),
        g_(Eigen::VectorXd::Zero(layout.dim())) {}

  void assemble(const FactorGraph& graph, const Values& values) {
    for (auto& d : diag_) d.setZero();
    for (auto& o : lower_) o.setZero();
    for (auto& b : border_) b.setZero();
    corner_.setZero();
    g_.setZero();
    for (const auto& factor : graph.factors) add(linearize(factor, values, graph.gravity));
  }

  /// Solves (H + damping * diag(H)) step = -g. False when a pivot block is not positive definite.
  bool solve(double damping, Eigen::VectorXd& step) const {
    const int K = kf_idx::kDim;
    std::vector<Mat15x15> inverses(static_cast<std::size_t>(n_kf_));
    std::vector<Border> border = border_;
    Eigen::MatrixXd corner = corner_;
    Eigen::VectorXd rhs = -g_;
    for (int s = 0; s < n_st_; ++s) corner(s, s) += damping * clamp(corner_(s, s));

    Mat15x15 carry = Mat15x15::Zero();  // fill passed from keyframe k-1 to k
    for (int k = 0; k < n_kf_; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      Mat15x15 d = diag_[ku] - carry;
      for (int i = 0; i < K; ++i) d(i, i) += damping * clamp(diag_[ku](i, i));
      Eigen::LLT<Mat15x15> llt(d);
      if (llt.info() != Eigen::Success) return false;
      const Mat15x15& dinv = inverses[ku] = llt.solve(Mat15x15::Identity());

      const Vec15d dinv_r = dinv * rhs.segment<15>(k * K);
      if (n_st_ > 0) {
        const Border s_dinv = border[ku].lazyProduct(dinv);
        corner.noalias() -= s_dinv.lazyProduct(border[ku].transpose());
        rhs.tail(n_st_).noalias() -= border[ku] * dinv_r;
        if (k + 1 < n_kf_) border[ku + 1].noalias() -= s_dinv.lazyProduct(lower_[ku].transpose());
      }
      if (k + 1 < n_kf_) {
        const Mat15x15& o = lower_[ku];
        carry = o * dinv * o.transpose();
        rhs.segment<15>((k + 1) * K) -= o * dinv_r;
      }
    }

    step.resize(layout_.dim());
    if (n_st_ > 0) {
      Eigen::LLT<Eigen::MatrixXd> c(0.5 * (corner + corner.transpose()));
      if (c.info() != Eigen::Success) return false;
      step.tail(n_st_) = c.solve(rhs.tail(n_st_));
    }
    for (int k = n_kf_ - 1; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      Vec15d r = rhs.segment<15>(k * K);
      if (k + 1 < n_kf_) r -= lower_[ku].transpose() * step.segment<15>((k + 1) * K);
      if (n_st_ > 0) r -= border[ku].transpose() * step.tail(n_st_);
      step.segment<15>(k * K) = inverses[ku] * r;
    }
    return step.allFinite();
  }

 private:
  static double clamp(double v) { return std::clamp(v, 1e-6, 1e32); }

  void add(const LinearizedFactor& lin) {
    const int K = kf_idx::kDim;
    for (const auto& [va, Ja] : lin.jacobians) {
      const int oa = layout_.offset(va);
      g_.segment(oa, Ja.cols()).noalias() += Ja.transpose() * lin.residual;
      for (const auto& [vb, Jb] : lin.jacobians) {
        const int ob = layout_.offset(vb);
        if (va.is_station && vb.is_station) {
          const int sa = oa - K * n_kf_, sb = ob - K * n_kf_;
          corner_.block<3, 3>(sa, sb) += Ja.transpose().lazyProduct(Jb);
        } else if (va.is_station) {
          border_[static_cast<std::size_t>(ob / K)].middleRows<3>(oa - K * n_kf_) += Ja.transpose().lazyProduct(Jb);
        } else if (vb.is_station) {
          continue;  // mirror of the case above
        } else {
          const int la = oa / K, lb = ob / K;
          if (la == lb) {
            diag_[static_cast<std::size_t>(la)] += Ja.transpose().lazyProduct(Jb);
          } else if (la == lb + 1) {
            lower_[static_cast<std::size_t>(lb)] += Ja.transpose().lazyProduct(Jb);
          } else if (lb != la + 1) {
            throw ConfigError("factor couples non-consecutive keyframes");
          }
        }
      }
    }
  }

  const Layout& layout_;
  int n_kf_;
  int n_st_;
  std::vector<Mat15x15> diag_;
  std::vector<Mat15x15> lower_;  // H(k + 1, k)
  std::vector<Border> border_;   // H(stations, keyframe k)
  Eigen::MatrixXd corner_;       // H(stations, stations)
  Eigen::VectorXd g_;
};

}  // namespace

std::string_view factor_kind_name(FactorKind kind) {
  switch (kind) {
    case FactorKind::kPriorPose:
      return "PriorPose";
    case FactorKind::kPriorVelocity:
      return "PriorVelocity";
    case FactorKind::kPriorBias:
      return "PriorBias";
    case FactorKind::kImu:
      return "Imu";
    case FactorKind::kRange:
      return "Range";
    case FactorKind::kStationPrior:
      return "StationPrior";
    case FactorKind::kMarginal:
      return "Marginal";
  }
  return "Unknown";
}

std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::kCostTolerance:
      return "cost_tolerance";
    case Termination::kStepTolerance:
      return "step_tolerance";
    case Termination::kMaxIterations:
      return "max_iterations";
    case Termination::kNoProgress:
      return "no_progress";
  }
  return "unknown";
}

Eigen::Matrix<double, 15, 15> ImuFactor::cov() const { return imu_factor_cov(pre, bias_cov); }

Eigen::MatrixXd Factor::covariance() const {
  return std::visit(Overloaded{
                        [](const PriorPoseFactor& f) -> Eigen::MatrixXd { return f.cov; },
                        [](const PriorVelocityFactor& f) -> Eigen::MatrixXd { return f.cov; },
                        [](const PriorBiasFactor& f) -> Eigen::MatrixXd { return f.cov; },
                        [](const ImuFactor& f) -> Eigen::MatrixXd { return f.cov(); },
                        [](const RangeFactor& f) -> Eigen::MatrixXd {
                          return Eigen::MatrixXd::Constant(1, 1, f.sigma * f.sigma);
                        },
                        [](const StationPriorFactor& f) -> Eigen::MatrixXd {
                          return Eigen::MatrixXd::Identity(3, 3) * (f.sigma * f.sigma);
                        },
                        [](const MarginalFactor& f) -> Eigen::MatrixXd { return f.cov; },
                    },
                    data);
}

std::vector<int> Factor::keyframes() const {
  return std::visit(Overloaded{
                        [](const ImuFactor& f) { return std::vector<int>{f.keyframe_i, f.keyframe_j()}; },
                        [](const StationPriorFactor&) { return std::vector<int>{}; },
                        [](const auto& f) { return std::vector<int>{f.keyframe}; },
                    },
                    data);
}

void Factor::refresh_whitener() { whitener = whitener_from_cov(covariance()); }

double range_residual(const Vec3& p, const Vec3& L, double d) { return d - (p - L).norm(); }

Eigen::RowVector3d range_residual_gradient(const Vec3& p, const Vec3& L) {
  const Vec3 diff = p - L;
  const double n = diff.norm();
  if (n < 1e-6) {
    throw NumericalError(NumericalError::Kind::kDegenerateGeometry, "range factor position coincides with station");
  }
  return -diff.transpose() / n;
}

Eigen::VectorXd factor_residual(const Factor& factor, const Values& values, const Vec3& gravity) {
  return evaluate(factor, values, gravity, false).residual;
}

LinearizedFactor linearize(const Factor& factor, const Values& values, const Vec3& gravity) {
  LinearizedFactor lin = evaluate(factor, values, gravity, true);
  const auto& W = factor.whitener;
  lin.residual = W * lin.residual;
  for (auto& [var, J] : lin.jacobians) {
    Eigen::MatrixXd whitened = W.lazyProduct(J);
    J.swap(whitened);
  }
  return lin;
}

double total_cost(const FactorGraph& graph, const Values& values) {
  double cost = 0.0;
  for (const auto& f : graph.factors) {
    const Eigen::VectorXd r = factor_residual(f, values, graph.gravity);
    cost += (f.whitener * r).squaredNorm();
  }
  return cost;
}

KeyframeState to_keyframe(const NavState& state) {
  KeyframeState k;
  k.R = quat_to_rot(state.q);
  k.p = state.p;
  k.v = state.v;
  k.b_g = state.b_g;
  k.b_a = state.b_a;
  return k;
}

TrajectoryPoint to_trajectory_point(TimestampNs t_ns, const KeyframeState& state) {
  return {t_ns, state.p, rot_to_quat(state.R), state.v};
}

GraphBuild build_graph(const std::vector<ImuSample>& imu, const std::vector<ToaMeasurement>& toa,
                       const PgoConfig& config) {
  if (imu.size() < 2) {
    throw DataError(DataError::Kind::kEmptyInput, "graph construction needs at least two IMU samples");
  }
  if (!(config.node_rate_hz > 0.0)) throw ConfigError("node rate must be positive");
  if (config.range_sigma.size() != config.stations.size()) {
    throw ConfigError("range_sigma must have one entry per station");
  }

  GraphBuild out;
  FactorGraph& graph = out.graph;
  graph.stations = config.stations;
  graph.gravity = config.gravity;

  const auto period = static_cast<TimestampNs>(std::llround(1e9 / config.node_rate_hz));
  const TimestampNs t0 = imu.front().t_ns;
  const TimestampNs t_end = imu.back().t_ns;
  for (TimestampNs t = t0; t <= t_end; t += period) {
    graph.keyframes.push_back({static_cast<int>(graph.keyframes.size()), t});
  }
  const int n = static_cast<int>(graph.keyframes.size());

  // Priors on the first keyframe.
  const KeyframeState x0 = to_keyframe(config.initial_state);
  {
    PriorPoseFactor pose{0, x0.R, x0.p, Mat6::Zero()};
    pose.cov.diagonal() << Vec3::Constant(config.prior_sigma_theta * config.prior_sigma_theta),
        Vec3::Constant(config.prior_sigma_p * config.prior_sigma_p);
    graph.factors.push_back(Factor::make(pose));
    graph.factors.push_back(
        Factor::make(PriorVelocityFactor{0, x0.v, Mat3::Identity() * config.prior_sigma_v * config.prior_sigma_v}));
    Vec6 b;
    b << x0.b_g, x0.b_a;
    graph.factors.push_back(
        Factor::make(PriorBiasFactor{0, b, Mat6::Identity() * config.prior_sigma_bias * config.prior_sigma_bias}));
  }
  for (std::size_t s = 0; s < config.stations.size(); ++s) {
    graph.factors.push_back(
        Factor::make(StationPriorFactor{static_cast<int>(s), config.stations[s].position, config.station_sigma}));
  }

  // IMU factors: each IMU interval holds the mean of its two end samples, clipped to keyframe bounds.
  std::vector<std::vector<ImuInterval>> batches(static_cast<std::size_t>(std::max(n - 1, 0)));
  for (std::size_t m = 0; m + 1 < imu.size(); ++m) {
    const TimestampNs a = imu[m].t_ns;
    const TimestampNs b = imu[m + 1].t_ns;
    const Vec3 w = 0.5 * (imu[m].omega + imu[m + 1].omega);
    const Vec3 acc = 0.5 * (imu[m].accel + imu[m + 1].accel);
    for (auto k = static_cast<int>((a - t0) / period); k < n - 1; ++k) {
      const TimestampNs lo = std::max(a, graph.keyframes[static_cast<std::size_t>(k)].t_ns);
      const TimestampNs hi = std::min(b, graph.keyframes[static_cast<std::size_t>(k + 1)].t_ns);
      if (lo >= b) break;
      if (hi > lo) batches[static_cast<std::size_t>(k)].push_back({w, acc, 1e-9 * static_cast<double>(hi - lo)});
    }
  }
  for (int k = 0; k + 1 < n; ++k) {
    ImuFactor f;
    f.keyframe_i = k;
    f.intervals = std::move(batches[static_cast<std::size_t>(k)]);
    f.pre = preintegrate(f.intervals, x0.b_g, x0.b_a, config.imu_noise);
    f.bias_jac = bias_jacobians(f.intervals, x0.b_g, x0.b_a, config.imu_noise);
    f.bias_cov = bias_walk_cov(config.imu_noise, f.pre.dt_total);
    graph.factors.push_back(Factor::make(std::move(f)));
  }

  // Range factors on the nearest keyframe.
  for (const auto& m : toa) {
    auto station = std::find_if(config.stations.begin(), config.stations.end(),
                                [&](const BaseStation& s) { return s.id == m.bs_id; });
    if (station == config.stations.end()) {
      throw DataError(DataError::Kind::kUnknownBsId, "ToA references unknown station " + std::to_string(m.bs_id));
    }
    const TimestampNs rel = m.t_ns - t0;
    int k = 0;
    if (rel > 0) {
      k = static_cast<int>(rel / period);
      if (k + 1 < n) {
        const TimestampNs to_lo = rel - static_cast<TimestampNs>(k) * period;
        const TimestampNs to_hi = static_cast<TimestampNs>(k + 1) * period - rel;
        if (to_hi < to_lo) ++k;
      }
    }
    k = std::min(k, n - 1);
    const TimestampNs gap = std::llabs(m.t_ns - graph.keyframes[static_cast<std::size_t>(k)].t_ns);
    if (2 * gap > period) continue;  // beyond half a node period of every keyframe
    const auto s = static_cast<std::size_t>(station - config.stations.begin());
    graph.factors.push_back(
        Factor::make(RangeFactor{k, static_cast<int>(s), m.t_ns, m.distance, config.range_sigma[s]}));
  }

  // Dead-reckoned initial values.
  out.initial.stations.reserve(config.stations.size());
  for (const auto& s : config.stations) out.initial.stations.push_back(s.position);
  out.initial.keyframes.assign(static_cast<std::size_t>(n), x0);
  for (const auto& f : graph.factors) {
    if (const auto* imu_f = std::get_if<ImuFactor>(&f.data)) {
      const auto i = static_cast<std::size_t>(imu_f->keyframe_i);
      out.initial.keyframes[i + 1] = predict_keyframe(out.initial.keyframes[i], imu_f->pre, config.gravity);
    }
  }
  return out;
}

int refresh_imu_linearization(FactorGraph& graph, const Values& values, double threshold) {
  int refreshed = 0;
  for (auto& factor : graph.factors) {
    auto* f = std::get_if<ImuFactor>(&factor.data);
    if (f == nullptr) continue;
    const KeyframeState& xi = keyframe_at(values, f->keyframe_i);
    // The increments are linear in the accel bias, so only gyro drift degrades the correction.
    if ((xi.b_g - f->pre.bias_g_lin).cwiseAbs().maxCoeff() <= threshold) continue;
    f->pre = preintegrate(f->intervals, xi.b_g, xi.b_a, f->pre.noise);
    f->bias_jac = bias_jacobians(f->intervals, xi.b_g, xi.b_a, f->pre.noise);
    factor.refresh_whitener();
    ++refreshed;
  }
  return refreshed;
}

OptimizeResult optimize(const FactorGraph& graph, const Values& initial, const LmOptions& options) {
  const Layout layout(graph);
  const int dim = layout.dim();

  OptimizeResult result{initial, {}};
  OptimizeReport& report = result.report;
  double cost = total_cost(graph, initial);
  if (!std::isfinite(cost)) {
    throw NumericalError(NumericalError::Kind::kNonFiniteCost, "initial cost is not finite");
  }
  report.initial_cost = cost;
  report.iterations.push_back({0, cost, 0.0, true});
  if (dim == 0) {
    report.final_cost = cost;
    report.termination = Termination::kStepTolerance;
    return result;
  }

  NormalEquations normal(layout);
  double damping = options.initial_damping;
  Values& values = result.values;
  bool relinearize = true;
  Eigen::VectorXd step(dim);

  for (int iter = 1; iter <= options.max_iters; ++iter) {
    if (relinearize) {
      normal.assemble(graph, values);
      relinearize = false;
    }
    report.iteration_count = iter;
    if (!normal.solve(damping, step)) {
      damping *= 10.0;
      report.iterations.push_back({iter, cost, damping, false});
      if (damping > 1e16) {
        throw NumericalError(NumericalError::Kind::kSingularNormalEquations,
                             "normal equations stayed singular after damping escalation");
      }
      continue;
    }

    const double x_norm = state_norm(values, layout);
    if (step.norm() <= options.step_tolerance * (x_norm + options.step_tolerance)) {
      report.iterations.push_back({iter, cost, damping, false});
      report.termination = Termination::kStepTolerance;
      report.final_cost = cost;
      return result;
    }

    Values candidate = apply_step(values, layout, step);
    const double new_cost = total_cost(graph, candidate);
    if (std::isfinite(new_cost) && new_cost < cost) {
      const double decrease = cost - new_cost;
      values = std::move(candidate);
      cost = new_cost;
      damping = std::max(damping / 10.0, 1e-12);
      relinearize = true;
      report.iterations.push_back({iter, cost, damping, true});
      if (decrease <= options.cost_tolerance * (cost + decrease)) {
        report.termination = Termination::kCostTolerance;
        report.final_cost = cost;
        return result;
      }
    } else {
      damping *= 10.0;
      report.iterations.push_back({iter, cost, damping, false});
      if (damping > 1e16) {
        report.termination = Termination::kNoProgress;
        report.final_cost = cost;
        return result;
      }
    }
  }
  report.termination = Termination::kMaxIterations;
  report.final_cost = cost;
  return result;
}

void marginalize_oldest(FactorGraph& graph, const Values& values) {
  if (graph.keyframes.size() < 2) {
    throw ConfigError("marginalization needs at least two keyframes in the window");
  }
  const int oldest = graph.keyframes.front().index;
  const int next = oldest + 1;

  Eigen::Matrix<double, 30, 30> H = Eigen::Matrix<double, 30, 30>::Zero();
  Eigen::Matrix<double, 30, 1> g = Eigen::Matrix<double, 30, 1>::Zero();
  std::vector<Factor> kept;
  kept.reserve(graph.factors.size());
  for (auto& factor : graph.factors) {
    const auto kfs = factor.keyframes();
    if (std::find(kfs.begin(), kfs.end(), oldest) == kfs.end()) {
      kept.push_back(std::move(factor));
      continue;
    }
    const LinearizedFactor lin = linearize(factor, values, graph.gravity);
    for (const auto& [va, Ja] : lin.jacobians) {
      if (va.is_station) continue;  // stations held fixed
      const int oa = (va.index - oldest) * kf_idx::kDim;
      g.segment<15>(oa) += Ja.transpose() * lin.residual;
      for (const auto& [vb, Jb] : lin.jacobians) {
        if (vb.is_station) continue;
        const int ob = (vb.index - oldest) * kf_idx::kDim;
        H.block<15, 15>(oa, ob) += Ja.transpose() * Jb;
      }
    }
  }

  const Mat15x15 H00 = H.topLeftCorner<15, 15>();
  const Mat15x15 H01 = H.topRightCorner<15, 15>();
  const Mat15x15 H11 = H.bottomRightCorner<15, 15>();
  Eigen::LDLT<Mat15x15> h00(H00);
  const Mat15x15 info = H11 - H01.transpose() * h00.solve(H01);
  const Vec15d grad = g.tail<15>() - H01.transpose() * h00.solve(g.head<15>());

  Mat15x15 sym = 0.5 * (info + info.transpose());
  Eigen::LDLT<Mat15x15> lam(sym);
  if (lam.info() != Eigen::Success || !lam.isPositive()) {
    sym += Mat15x15::Identity() * 1e-9 * std::max(1.0, sym.diagonal().maxCoeff());
    lam.compute(sym);
  }
  Mat15x15 cov = lam.solve(Mat15x15::Identity());
  cov = 0.5 * (cov + cov.transpose());

  MarginalFactor marginal;
  marginal.keyframe = next;
  marginal.mean = retract(keyframe_at(values, next), -lam.solve(grad));
  marginal.cov = cov;
  kept.push_back(Factor::make(std::move(marginal)));

  graph.factors = std::move(kept);
  graph.keyframes.erase(graph.keyframes.begin());
}

PgoRun run_sliding_window(const std::vector<ImuSample>& imu, const std::vector<ToaMeasurement>& toa,
                          const PgoConfig& config, const SlidingWindowOptions& options) {
  using Clock = std::chrono::steady_clock;
  if (options.window < 2) throw ConfigError("window must hold at least two keyframes");

  GraphBuild build = build_graph(imu, toa, config);
  const FactorGraph& full = build.graph;
  const auto n = full.keyframes.size();

  // Factors become available when their newest keyframe arrives.
  std::vector<std::vector<std::size_t>> arrivals(n);
  for (std::size_t i = 0; i < full.factors.size(); ++i) {
    const auto kfs = full.factors[i].keyframes();
    const int newest = kfs.empty() ? 0 : *std::max_element(kfs.begin(), kfs.end());
    arrivals[static_cast<std::size_t>(newest)].push_back(i);
  }

  PgoRun run;
  Values current = build.initial;
  // Consecutive windows share almost all of their structure, so each step starts from the damping the previous one ended with.
  LmOptions lm = options.lm;
  FactorGraph window;
  window.stations = full.stations;
  window.gravity = full.gravity;

  for (std::size_t k = 0; k < n; ++k) {
    const auto start = Clock::now();
    window.keyframes.push_back(full.keyframes[k]);
    for (std::size_t i : arrivals[k]) {
      const Factor& f = full.factors[i];
      if (const auto* imu_f = std::get_if<ImuFactor>(&f.data)) {
        const KeyframeState& prev = current.keyframes[k - 1];
        current.keyframes[k] = predict_keyframe(
            prev, correct_bias(imu_f->pre, imu_f->bias_jac, prev.b_g, prev.b_a), full.gravity);
      }
      window.factors.push_back(f);
    }
    if (window.keyframes.size() > static_cast<std::size_t>(options.window)) {
      marginalize_oldest(window, current);
    }
    refresh_imu_linearization(window, current, options.bias_refresh_threshold);
    OptimizeResult res = optimize(window, current, lm);
    lm.initial_damping = std::min(res.report.iterations.back().damping, options.lm.initial_damping);
    current = std::move(res.values);
    run.step_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    run.streamed.push_back(current.keyframes[k]);
    run.step_reports.push_back(std::move(res.report));
  }

  if (options.final_batch) {
    FactorGraph batch_graph = full;
    refresh_imu_linearization(batch_graph, current, options.bias_refresh_threshold);
    OptimizeResult res = optimize(batch_graph, current, options.lm);
    run.batch = res.values.keyframes;
    run.stations = res.values.stations;
    run.final_report = std::move(res.report);
  } else {
    run.batch = current.keyframes;
    run.stations = current.stations;
    if (!run.step_reports.empty()) run.final_report = run.step_reports.back();
  }
  for (const auto& kf : full.keyframes) run.keyframe_times.push_back(kf.t_ns);
  return run;
}

}  // namespace toa_fusion
