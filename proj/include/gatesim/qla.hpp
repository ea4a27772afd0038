#pragma once

// Dense complex linear algebra for operators on V, W and V (x) W.
//
// Index convention (system-major): the basis vector v_a (x) w_i of V (x) W has
// combined index a * m + i, where m = dim W. Every routine and every file
// format in the project uses this ordering.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "gatesim/errors.hpp"
#include "gatesim/random.hpp"

namespace gatesim {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using StateVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

namespace tol {
inline constexpr double hermitian = 1e-12;
inline constexpr double unitary = 1e-10;
inline constexpr double identity = 1e-9;
} // namespace tol

namespace qla {

/// Largest entry modulus, the norm used by every tolerance in the project.
template <typename Derived>
double max_abs(const Eigen::MatrixBase<Derived>& a) {
    return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

inline bool is_hermitian(const ComplexMatrix& a, double tolerance = tol::hermitian) {
    return a.rows() == a.cols() && max_abs(a - a.adjoint()) <= tolerance;
}

inline bool is_unitary(const ComplexMatrix& u, double tolerance = tol::unitary) {
    if (u.rows() != u.cols()) {
        return false;
    }
    const auto n = u.rows();
    return max_abs(u.adjoint() * u - ComplexMatrix::Identity(n, n)) <= tolerance;
}

inline void require_hermitian(const ComplexMatrix& a, const char* what) {
    if (a.rows() != a.cols()) {
        throw DimensionMismatch(std::string(what) + " must be square");
    }
    if (!is_hermitian(a)) {
        throw NonHermitianInput(std::string(what) + " is not Hermitian within 1e-12");
    }
}

inline StateVector basis_vector(std::size_t j, std::size_t dim) {
    if (j >= dim) {
        throw IndexOutOfRange("basis index " + std::to_string(j) + " out of range for dim " +
                              std::to_string(dim));
    }
    StateVector e = StateVector::Zero(static_cast<Eigen::Index>(dim));
    e(static_cast<Eigen::Index>(j)) = 1.0;
    return e;
}

namespace detail {
template <typename Out, typename A, typename B>
Out kronecker(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    const auto br = b.rows();
    const auto bc = b.cols();
    Out out(a.rows() * br, a.cols() * bc);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * br, j * bc, br, bc) = a(i, j) * b;
        }
    }
    return out;
}
} // namespace detail

/// Kronecker product: entry ((ar, br), (ac, bc)) sits at (ar * rows(b) + br, ac * cols(b) + bc).
inline ComplexMatrix tensor_product(const ComplexMatrix& a, const ComplexMatrix& b) {
    return detail::kronecker<ComplexMatrix>(a, b);
}

inline StateVector tensor_product(const StateVector& a, const StateVector& b) {
    return detail::kronecker<StateVector>(a, b);
}

/// exp(-i H t / hbar), assembled as Q diag(exp(-i lambda_k t / hbar)) Q^dagger.
inline ComplexMatrix evolution_operator(const ComplexMatrix& hamiltonian, double t, double hbar = 1.0) {
    require_hermitian(hamiltonian, "Hamiltonian");
    if (!(hbar > 0.0)) {
        throw std::invalid_argument("hbar must be positive");
    }
    // Symmetrize so the solver sees an exactly Hermitian input.
    const ComplexMatrix h = 0.5 * (hamiltonian + hamiltonian.adjoint());
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(h);
    const RealVector& lambda = eig.eigenvalues();
    const ComplexMatrix& q = eig.eigenvectors();
    Eigen::VectorXcd phases(lambda.size());
    for (Eigen::Index k = 0; k < lambda.size(); ++k) {
        phases(k) = std::polar(1.0, -lambda(k) * t / hbar);
    }
    return q * phases.asDiagonal() * q.adjoint();
}

/// P_{V_sub (x) W} = P_sub (x) I_m for a projector P_sub on V.
inline ComplexMatrix lift_projector(const ComplexMatrix& system_projector, std::size_t m) {
    const auto mi = static_cast<Eigen::Index>(m);
    return tensor_product(system_projector, ComplexMatrix::Identity(mi, mi));
}

/// |v_j><v_j| (x) I_m on V (x) W, with v_j the j-th standard basis vector (0-based).
inline ComplexMatrix gate_projector(std::size_t j, std::size_t n, std::size_t m) {
    if (j >= n) {
        throw IndexOutOfRange("gate index " + std::to_string(j) + " out of range for N=" +
                              std::to_string(n));
    }
    const StateVector v = basis_vector(j, n);
    return lift_projector(v * v.adjoint(), m);
}

/// (Tr_W A)_{ab} = sum_i A_{(a,i),(b,i)}.
inline ComplexMatrix partial_trace_W(const ComplexMatrix& a, std::size_t n, std::size_t m) {
    const auto ni = static_cast<Eigen::Index>(n);
    const auto mi = static_cast<Eigen::Index>(m);
    if (a.rows() != ni * mi || a.cols() != ni * mi) {
        throw DimensionMismatch("partial_trace_W: operator is " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ", expected " +
                                std::to_string(ni * mi) + " square");
    }
    ComplexMatrix out = ComplexMatrix::Zero(ni, ni);
    for (Eigen::Index r = 0; r < ni; ++r) {
        for (Eigen::Index c = 0; c < ni; ++c) {
            Complex sum = 0.0;
            for (Eigen::Index i = 0; i < mi; ++i) {
                sum += a(r * mi + i, c * mi + i);
            }
            out(r, c) = sum;
        }
    }
    return out;
}

/// <v, xi> contracted over the left factor: out_b = sum_a conj(v_a) xi_{(a,b)}.
inline StateVector partial_inner_left(const StateVector& v, const StateVector& xi) {
    if (v.size() == 0 || xi.size() % v.size() != 0) {
        throw DimensionMismatch("partial_inner_left: dim " + std::to_string(xi.size()) +
                                " is not a multiple of " + std::to_string(v.size()));
    }
    const auto d1 = v.size();
    const auto d2 = xi.size() / d1;
    StateVector out = StateVector::Zero(d2);
    for (Eigen::Index a = 0; a < d1; ++a) {
        out += std::conj(v(a)) * xi.segment(a * d2, d2);
    }
    return out;
}

inline Complex complex_normal(Rng& rng) {
    const double re = rng.normal();
    const double im = rng.normal();
    return {re / std::numbers::sqrt2, im / std::numbers::sqrt2};
}

/// Orthonormalized seeded complex Gaussian matrix (two Gram-Schmidt passes per column).
inline ComplexMatrix random_unitary(std::size_t dim, std::uint64_t seed) {
    if (dim == 0) {
        throw std::invalid_argument("random_unitary: dim must be >= 1");
    }
    const auto n = static_cast<Eigen::Index>(dim);
    Rng rng(seed);
    ComplexMatrix u(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) {
            u(r, c) = complex_normal(rng);
        }
    }
    for (Eigen::Index c = 0; c < n; ++c) {
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index k = 0; k < c; ++k) {
                const Complex overlap = u.col(k).dot(u.col(c));
                u.col(c) -= overlap * u.col(k);
            }
        }
        u.col(c) /= u.col(c).norm();
    }
    return u;
}

/// (A + A^dagger) / 2 for a seeded complex Gaussian A. Exactly Hermitian.
inline ComplexMatrix random_hermitian(std::size_t dim, std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(dim);
    Rng rng(seed);
    ComplexMatrix a(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) {
            a(r, c) = complex_normal(rng);
        }
    }
    return 0.5 * (a + a.adjoint());
}

/// Rewrites a combined Hamiltonian in the frame whose standard basis is the
/// columns of `basis`, so that gate j measures along basis.col(j).
/// States must be mapped with basis^dagger accordingly.
inline ComplexMatrix change_basis(const ComplexMatrix& hamiltonian, const ComplexMatrix& basis,
                                  std::size_t m) {
    if (!is_unitary(basis)) {
        throw std::invalid_argument("change_basis: basis is not unitary within 1e-10");
    }
    const ComplexMatrix lifted = lift_projector(basis, m);
    if (lifted.rows() != hamiltonian.rows()) {
        throw DimensionMismatch("change_basis: basis does not match Hamiltonian dimension");
    }
    return lifted.adjoint() * hamiltonian * lifted;
}

} // namespace qla
} // namespace gatesim
