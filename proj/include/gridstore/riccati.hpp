#pragma once

// Surrogate LQ problem in state-space form and its optimal linear controller
// for an arbitrary connected network.
//
// State X = [F(t-1); B(t)], control U = [Y(t); W(t)], disturbance Z(t).
// The controller is the stationary solution of the control Riccati equation
// together with the filter Riccati equation of the correlated-noise problem.
// Global energy balance, 𝟙ᵀ(Y + W) = 𝟙ᵀZ, is imposed as a hard linear
// constraint on U.

#include "gridstore/errors.hpp"
#include "gridstore/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace gridstore {

/// Linear-system matrices of the surrogate problem.
struct StateSpaceModel {
    FlowOperators ops;
    Matrix A;        ///< (|E|+|V|)², [[0,0],[0,I]]
    Matrix D;        ///< (|E|+|V|)×2|V|, [[-∇Δ⁻¹, -∇Δ⁻¹],[I, 0]]
    Matrix E;        ///< (|E|+|V|)×|V|, [∇Δ⁻¹; 0]
    Matrix E_white;  ///< E Σ_Z^{-1/2}
    Matrix C_obs;    ///< 2|V|×(|E|+|V|), selects B into the lower half of R
    Matrix G_corr;   ///< 2|V|×|V|, [I; 0]
    Vector mean_z;
    Matrix noise_cov;
    Matrix noise_sqrt;
    Matrix noise_inv_sqrt;

    Index nodes() const noexcept { return ops.nodes(); }
    Index edges() const noexcept { return ops.edges(); }
    Index state_dim() const noexcept { return ops.edges() + ops.nodes(); }
    Index control_dim() const noexcept { return 2 * ops.nodes(); }
};

namespace detail {

/// Symmetric square root and inverse square root of an SPD matrix.
inline std::pair<Matrix, Matrix> spd_roots(const Matrix& cov) {
    if (cov.rows() != cov.cols()) throw ShapeError("noise covariance must be square");
    if (!cov.isApprox(cov.transpose(), 1e-12)) throw NumericError("noise covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (cov + cov.transpose()));
    if (eig.info() != Eigen::Success) throw NumericError("noise covariance eigendecomposition failed");
    const double top = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
    if (!(eig.eigenvalues().minCoeff() > 1e-14 * top)) throw NumericError("noise covariance is not positive definite");
    const Matrix& V = eig.eigenvectors();
    const Vector root = eig.eigenvalues().cwiseSqrt();
    Matrix sqrt_m = V * root.asDiagonal() * V.transpose();
    Matrix inv_sqrt = V * root.cwiseInverse().asDiagonal() * V.transpose();
    return {0.5 * (sqrt_m + sqrt_m.transpose()), 0.5 * (inv_sqrt + inv_sqrt.transpose())};
}

/// Moore-Penrose pseudoinverse of a symmetric matrix.
inline Matrix symmetric_pinv(const Matrix& m, double rel_tol = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
    if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    Vector inv = Vector::Zero(m.rows());
    for (Index i = 0; i < m.rows(); ++i) {
        const double v = eig.eigenvalues()[i];
        if (std::abs(v) > rel_tol * std::max(top, 1e-300)) inv[i] = 1.0 / v;
    }
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

inline StateSpaceModel assemble_state_space(const FlowOperators& ops, const Vector& mean_z, const Matrix& noise_cov) {
    const Index n = ops.nodes();
    const Index m = ops.edges();
    if (mean_z.size() != n) throw ShapeError("mean_z must have one entry per node");
    if (noise_cov.rows() != n || noise_cov.cols() != n) throw ShapeError("noise covariance must be |V|×|V|");
    if (!mean_z.allFinite()) throw ParameterError("mean_z must be finite");

    StateSpaceModel model;
    model.ops = ops;
    model.mean_z = mean_z;
    model.noise_cov = noise_cov;
    std::tie(model.noise_sqrt, model.noise_inv_sqrt) = detail::spd_roots(noise_cov);

    const Matrix grad_pinv = ops.incidence * ops.pseudoinverse;  // ∇Δ⁻¹
    model.A = Matrix::Zero(m + n, m + n);
    model.A.bottomRightCorner(n, n).setIdentity();
    model.D = Matrix::Zero(m + n, 2 * n);
    model.D.topLeftCorner(m, n) = -grad_pinv;
    model.D.topRightCorner(m, n) = -grad_pinv;
    model.D.bottomLeftCorner(n, n).setIdentity();
    model.E = Matrix::Zero(m + n, n);
    model.E.topRows(m) = grad_pinv;
    model.E_white = model.E * model.noise_inv_sqrt;
    model.C_obs = Matrix::Zero(2 * n, m + n);
    model.C_obs.bottomRightCorner(n, n).setIdentity();
    model.G_corr = Matrix::Zero(2 * n, n);
    model.G_corr.topRows(n).setIdentity();
    return model;
}

inline StateSpaceModel assemble_state_space(const FlowOperators& ops, double mean_z, const Matrix& noise_cov) {
    return assemble_state_space(ops, Vector::Constant(ops.nodes(), mean_z), noise_cov);
}

/// Diagonal Lagrange weights: γ per edge, ξ per node, η per node.
struct CostWeights {
    Vector gamma;
    Vector xi;
    Vector eta;

    static CostWeights uniform(Index edges, Index nodes, double gamma, double xi, double eta = 1.0) {
        return {Vector::Constant(edges, gamma), Vector::Constant(nodes, xi), Vector::Constant(nodes, eta)};
    }

    Matrix Q1() const {
        Vector d(gamma.size() + xi.size());
        d << gamma, xi;
        return d.asDiagonal();
    }

    Matrix Q2() const {
        Vector d(2 * eta.size());
        d << Vector::Zero(eta.size()), eta;
        return d.asDiagonal();
    }

    void validate(Index edges, Index nodes) const {
        if (gamma.size() != edges || xi.size() != nodes || eta.size() != nodes) {
            throw ShapeError("cost weights do not match the network dimensions");
        }
        if (!(gamma.array() >= 0.0).all() || !gamma.allFinite()) throw ParameterError("gamma_e must be >= 0");
        if (!(xi.array() >= 0.0).all() || !xi.allFinite()) throw ParameterError("xi_i must be >= 0");
        if (!(eta.array() > 0.0).all() || !eta.allFinite()) throw ParameterError("eta_i must be > 0");
    }
};

/// Converged controller with diagnostics.
struct RiccatiSolution {
    Matrix S;
    Matrix K_gain;
    /// Balance-constrained inverse of K_gain.
    Matrix K_constrained;
    Matrix L_gain;
    /// Gain on the whitened observation of Z − Z̄ (2|V|×|V|).
    Matrix noise_gain_white;
    /// Same gain in raw units of Z.
    Matrix noise_gain;
    Matrix J;
    Matrix M_filt;
    Matrix O_gain;
    Vector Y_bar;
    Vector W_bar;
    Vector F_bar;
    double residual_S = 0.0;
    double residual_J = 0.0;
    long iterations_S = 0;
    long iterations_J = 0;
    double condition_K = 0.0;
    double spectral_radius = 0.0;
};

inline constexpr double kMaxConditionNumber = 1e12;

/// Minimiser of Σ γ_e F̄_e² + Σ η_i W̄_i² over balanced static dispatch:
///   W̄ = [I + Δ(∇ᵀγ∇)⁺Δη]⁻¹ Z̄,  Ȳ = 0,  F̄ = −∇Δ⁻¹(Z̄ − W̄).
struct StaticComponent {
    Vector Y_bar;
    Vector W_bar;
    Vector F_bar;
};

inline StaticComponent static_component(const FlowOperators& ops, const CostWeights& costs, const Vector& mean_z) {
    const Index n = ops.nodes();
    costs.validate(ops.edges(), n);
    if (mean_z.size() != n) throw ShapeError("mean_z must have one entry per node");
    if (!mean_z.allFinite()) throw ParameterError("mean_z must be finite");

    const Matrix weighted = ops.incidence.transpose() * costs.gamma.asDiagonal() * ops.incidence;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(weighted);
    const double top = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    const auto zero_modes = (eig.eigenvalues().array() <= 1e-12 * top).count();
    if (zero_modes != 1) {
        throw ConditioningError("flow weights leave " + std::to_string(zero_modes) +
                                " unpenalised flow directions; static dispatch is not unique");
    }
    const Matrix system = Matrix::Identity(n, n) +
                          ops.laplacian * detail::symmetric_pinv(weighted) * ops.laplacian * costs.eta.asDiagonal();
    Eigen::FullPivLU<Matrix> lu(system);
    if (!lu.isInvertible() || 1.0 / lu.rcond() > kMaxConditionNumber) {
        throw ConditioningError("static dispatch system is singular");
    }
    StaticComponent out;
    out.Y_bar = Vector::Zero(n);
    out.W_bar = lu.solve(mean_z);
    out.F_bar = ops.flow_map() * (mean_z - out.W_bar);
    return out;
}

namespace detail {

struct ConstrainedGain {
    Matrix K;
    Matrix K_inv;
    Matrix K_c;
    Vector K_inv_a;
    double a_K_inv_a = 0.0;
};

// K = DᵀSD + Q₂ and its inverse restricted to aᵀu = 0, a = 𝟙 on U = [Y; W].
inline ConstrainedGain constrained_gain(const StateSpaceModel& model, const Matrix& S, const Matrix& Q2) {
    ConstrainedGain g;
    g.K = model.D.transpose() * S * model.D + Q2;
    g.K = 0.5 * (g.K + g.K.transpose()).eval();
    Eigen::LLT<Matrix> llt(g.K);
    if (llt.info() != Eigen::Success) throw ConditioningError("K = DᵀSD + Q₂ is not positive definite");
    g.K_inv = llt.solve(Matrix::Identity(g.K.rows(), g.K.cols()));
    const Vector a = Vector::Ones(g.K.rows());
    g.K_inv_a = g.K_inv * a;
    g.a_K_inv_a = a.dot(g.K_inv_a);
    g.K_c = g.K_inv - g.K_inv_a * g.K_inv_a.transpose() / g.a_K_inv_a;
    return g;
}

inline Matrix riccati_map(const StateSpaceModel& model, const Matrix& S, const Matrix& Q1, const Matrix& Q2) {
    const auto g = constrained_gain(model, S, Q2);
    const Matrix DtSA = model.D.transpose() * S * model.A;
    Matrix next = model.A.transpose() * S * model.A + Q1 - DtSA.transpose() * g.K_c * DtSA;
    return 0.5 * (next + next.transpose());
}

inline Matrix filter_gain_matrix(const StateSpaceModel& model, const Matrix& J) {
    const Index n = model.nodes();
    Matrix M = model.C_obs * J * model.C_obs.transpose();
    M.topLeftCorner(n, n) += Matrix::Identity(n, n);
    return M;
}

inline Matrix filter_map(const StateSpaceModel& model, const Matrix& J, Matrix* O_out = nullptr, Matrix* M_out = nullptr) {
    const Matrix M = filter_gain_matrix(model, J);
    const Matrix O = (model.A * J * model.C_obs.transpose() + model.E_white * model.G_corr.transpose()) *
                     symmetric_pinv(M);
    if (O_out) *O_out = O;
    if (M_out) *M_out = M;
    Matrix next = model.A * J * model.A.transpose() + model.E_white * model.E_white.transpose() - O * M * O.transpose();
    return 0.5 * (next + next.transpose());
}

}  // namespace detail

/// Solves the control and filter Riccati equations by (optionally damped)
/// fixed-point iteration from S₀ = Q₁, J₀ = E Eᵀ. Convergence is declared when
/// the Frobenius norm of the fixed-point residual, relative to max(1, ‖·‖),
/// drops to `tol`.
inline RiccatiSolution solve_riccati_pair(const StateSpaceModel& model, const CostWeights& costs, double tol = 1e-10,
                                          long max_iter = 100000, double damping = 1.0) {
    if (!(tol > 0.0)) throw ParameterError("tol must be positive");
    if (max_iter < 1) throw ParameterError("max_iter must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0)) throw ParameterError("damping must lie in (0, 1]");
    costs.validate(model.edges(), model.nodes());

    const Matrix Q1 = costs.Q1();
    const Matrix Q2 = costs.Q2();

    RiccatiSolution sol;
    Matrix S = Q1;
    double residual = std::numeric_limits<double>::infinity();
    long it = 0;
    for (; it < max_iter; ++it) {
        const Matrix next = detail::riccati_map(model, S, Q1, Q2);
        residual = (next - S).norm() / std::max(1.0, next.norm());
        S = damping == 1.0 ? next : ((1.0 - damping) * S + damping * next).eval();
        if (residual <= tol) break;
    }
    if (residual > tol) throw ConvergenceError("control Riccati iteration did not converge", residual);
    sol.S = S;
    sol.residual_S = (detail::riccati_map(model, S, Q1, Q2) - S).norm() / std::max(1.0, S.norm());
    sol.iterations_S = it + 1;

    Matrix J = model.E_white * model.E_white.transpose();
    residual = std::numeric_limits<double>::infinity();
    it = 0;
    for (; it < max_iter; ++it) {
        const Matrix next = detail::filter_map(model, J);
        residual = (next - J).norm() / std::max(1.0, next.norm());
        J = next;
        if (residual <= tol) break;
    }
    if (residual > tol) throw ConvergenceError("filter Riccati iteration did not converge", residual);
    sol.J = J;
    sol.residual_J = (detail::filter_map(model, J, &sol.O_gain, &sol.M_filt) - J).norm() / std::max(1.0, J.norm());
    sol.iterations_J = it + 1;

    const auto g = detail::constrained_gain(model, S, Q2);
    Eigen::SelfAdjointEigenSolver<Matrix> keig(g.K, Eigen::EigenvaluesOnly);
    sol.condition_K = keig.eigenvalues().maxCoeff() / keig.eigenvalues().minCoeff();
    if (!(sol.condition_K <= kMaxConditionNumber)) {
        throw ConditioningError("K gain condition number " + std::to_string(sol.condition_K) + " exceeds 1e12");
    }
    sol.K_gain = g.K;
    sol.K_constrained = g.K_c;
    sol.L_gain = g.K_c * model.D.transpose() * S * model.A;

    // Observation-dependent gain on Z − Z̄ read through the filter, plus the
    // feed-through that keeps 𝟙ᵀU = 𝟙ᵀZ.
    const Matrix filter_read = model.G_corr.transpose() * detail::symmetric_pinv(sol.M_filt) * model.G_corr;
    const Matrix balance = g.K_inv_a * Vector::Ones(model.nodes()).transpose() / g.a_K_inv_a;
    sol.noise_gain_white =
        g.K_c * model.D.transpose() * S * model.E_white * filter_read - balance * model.noise_inv_sqrt;
    sol.noise_gain = sol.noise_gain_white * model.noise_sqrt;

    const Matrix closed_loop = model.A - model.D * sol.L_gain;
    Eigen::EigenSolver<Matrix> cl(closed_loop, false);
    sol.spectral_radius = cl.eigenvalues().cwiseAbs().maxCoeff();
    if (!(sol.spectral_radius < 1.0)) {
        throw NumericError("closed loop is not stable: spectral radius " + std::to_string(sol.spectral_radius));
    }

    const auto stat = static_component(model.ops, costs, model.mean_z);
    sol.Y_bar = stat.Y_bar;
    sol.W_bar = stat.W_bar;
    sol.F_bar = stat.F_bar;
    return sol;
}

/// Node-by-node gains of the law
///   Y = Ȳ + H (Z − Z̄) − K B,   W = W̄ + P (Z − Z̄) + Q B.
struct LinearController {
    Matrix H;
    Matrix K;
    Matrix P;
    Matrix Q;
    Vector Y_bar;
    Vector W_bar;
    Vector mean_z;
};

inline LinearController linear_controller(const RiccatiSolution& sol, const StateSpaceModel& model) {
    const Index n = model.nodes();
    const Index m = model.edges();
    LinearController c;
    c.H = -sol.noise_gain.topRows(n);
    c.P = -sol.noise_gain.bottomRows(n);
    c.K = sol.L_gain.block(0, m, n, n);
    c.Q = -sol.L_gain.block(n, m, n, n);
    c.Y_bar = sol.Y_bar;
    c.W_bar = sol.W_bar;
    c.mean_z = model.mean_z;
    return c;
}

struct ControlAction {
    Vector Y;
    Vector W;
};

/// U = Ū − L [0; B] − N (Z − Z̄), split into storage transfer Y and fast
/// generation W.
inline ControlAction control_action(const RiccatiSolution& sol, const StateSpaceModel& model, const Vector& z,
                                    const Vector& b) {
    const Index n = model.nodes();
    const Index m = model.edges();
    if (z.size() != n || b.size() != n) throw ShapeError("z and b must have one entry per node");
    if (sol.L_gain.rows() != 2 * n || sol.L_gain.cols() != m + n) throw ShapeError("solution does not match the model");
    Vector state = Vector::Zero(m + n);
    state.tail(n) = b;
    Vector u(2 * n);
    u << sol.Y_bar, sol.W_bar;
    u -= sol.L_gain * state + sol.noise_gain * (z - model.mean_z);
    return {u.head(n), u.tail(n)};
}

/// Response of a shift-equivariant gain to the Fourier mode `theta` on a ring
/// (dimension 1) or a side×side torus (dimension 2): (G v)_0 / v_0 with
/// v_x = exp(i θ·x).
inline std::complex<double> mode_response(const Matrix& gain, int dimension, std::size_t side,
                                          std::array<double, 2> theta) {
    const auto count = static_cast<Index>(dimension == 1 ? side : side * side);
    if (gain.rows() != count || gain.cols() != count) throw ShapeError("gain does not match the grid");
    std::complex<double> acc = 0.0;
    for (Index x = 0; x < count; ++x) {
        const double phase = dimension == 1
                                 ? theta[0] * static_cast<double>(x)
                                 : theta[0] * static_cast<double>(x / static_cast<Index>(side)) +
                                       theta[1] * static_cast<double>(x % static_cast<Index>(side));
        acc += gain(0, x) * std::polar(1.0, phase);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Text dump
// ---------------------------------------------------------------------------

inline constexpr const char* kRiccatiDumpMagic = "gridstore-riccati";
inline constexpr int kRiccatiDumpVersion = 1;

namespace detail {

inline void dump_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
        out << '\n';
    }
}

}  // namespace detail

/// Versioned plain-text dump of every matrix and diagnostic, with
/// round-trip precision.
inline void write_riccati_solution(std::ostream& out, const RiccatiSolution& sol) {
    out << kRiccatiDumpMagic << ' ' << kRiccatiDumpVersion << '\n';
    out << std::setprecision(17);
    out << "scalar residual_S " << sol.residual_S << '\n';
    out << "scalar residual_J " << sol.residual_J << '\n';
    out << "scalar iterations_S " << sol.iterations_S << '\n';
    out << "scalar iterations_J " << sol.iterations_J << '\n';
    out << "scalar condition_K " << sol.condition_K << '\n';
    out << "scalar spectral_radius " << sol.spectral_radius << '\n';
    detail::dump_matrix(out, "S", sol.S);
    detail::dump_matrix(out, "K_gain", sol.K_gain);
    detail::dump_matrix(out, "K_constrained", sol.K_constrained);
    detail::dump_matrix(out, "L_gain", sol.L_gain);
    detail::dump_matrix(out, "noise_gain_white", sol.noise_gain_white);
    detail::dump_matrix(out, "noise_gain", sol.noise_gain);
    detail::dump_matrix(out, "J", sol.J);
    detail::dump_matrix(out, "M_filt", sol.M_filt);
    detail::dump_matrix(out, "O_gain", sol.O_gain);
    detail::dump_matrix(out, "Y_bar", sol.Y_bar);
    detail::dump_matrix(out, "W_bar", sol.W_bar);
    detail::dump_matrix(out, "F_bar", sol.F_bar);
}

inline RiccatiSolution read_riccati_solution(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kRiccatiDumpMagic) throw FormatError("not a controller dump");
    if (version != kRiccatiDumpVersion) {
        throw FormatError("unsupported controller dump version " + std::to_string(version));
    }
    std::map<std::string, Matrix> matrices;
    std::map<std::string, double> scalars;
    std::string kind;
    while (in >> kind) {
        std::string name;
        if (kind == "scalar") {
            double v = 0.0;
            if (!(in >> name >> v)) throw FormatError("truncated scalar entry");
            scalars[name] = v;
        } else if (kind == "matrix") {
            Index rows = 0;
            Index cols = 0;
            if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) throw FormatError("bad matrix header");
            Matrix m(rows, cols);
            for (Index i = 0; i < rows; ++i) {
                for (Index j = 0; j < cols; ++j) {
                    if (!(in >> m(i, j))) throw FormatError("truncated matrix " + name);
                }
            }
            matrices[name] = std::move(m);
        } else {
            throw FormatError("unknown entry kind '" + kind + "'");
        }
    }
    auto mat = [&](const std::string& name) -> Matrix {
        auto it = matrices.find(name);
        if (it == matrices.end()) throw FormatError("controller dump lacks matrix " + name);
        return it->second;
    };
    auto sc = [&](const std::string& name) {
        auto it = scalars.find(name);
        if (it == scalars.end()) throw FormatError("controller dump lacks scalar " + name);
        return it->second;
    };
    RiccatiSolution sol;
    sol.S = mat("S");
    sol.K_gain = mat("K_gain");
    sol.K_constrained = mat("K_constrained");
    sol.L_gain = mat("L_gain");
    sol.noise_gain_white = mat("noise_gain_white");
    sol.noise_gain = mat("noise_gain");
    sol.J = mat("J");
    sol.M_filt = mat("M_filt");
    sol.O_gain = mat("O_gain");
    sol.Y_bar = mat("Y_bar");
    sol.W_bar = mat("W_bar");
    sol.F_bar = mat("F_bar");
    sol.residual_S = sc("residual_S");
    sol.residual_J = sc("residual_J");
    sol.iterations_S = static_cast<long>(sc("iterations_S"));
    sol.iterations_J = static_cast<long>(sc("iterations_J"));
    sol.condition_K = sc("condition_K");
    sol.spectral_radius = sc("spectral_radius");
    return sol;
}

}  // namespace gridstore
