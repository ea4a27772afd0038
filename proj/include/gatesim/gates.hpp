#pragma once

// The gate-energy measurement model.
//
// A measurement of xi runs in three steps against a ledger of gate energies:
//   1. gates whose traced projection of xi vanishes are disregarded;
//   2. every gate energy grows by the normalized closeness c_j;
//   3. the system enters the largest remaining gate under the order
//      (rho_j, j) and that gate pays one unit of energy.
// Because the closeness vector sums to one, the ledger total is conserved.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gatesim/errors.hpp"
#include "gatesim/qla.hpp"

namespace gatesim {

namespace tol {
// Closeness at or below this is treated as an exact zero (step 1).
inline constexpr double closed_gate = 1e-14;
// Energies closer than this tie, and the index decides.
inline constexpr double energy_tie = 1e-12;
inline constexpr double independence = 1e-10;
} // namespace tol

struct Dims {
    std::size_t system = 0;    // N = dim V
    std::size_t apparatus = 0; // m = dim W

    std::size_t combined() const { return system * apparatus; }
};

/// System + apparatus with its one-step evolution and per-gate trace operators
/// M_j = Tr_W(P_{v_j (x) W} U(1)). Immutable once built.
class Apparatus {
  public:
    std::size_t system_dim() const { return dims_.system; }
    std::size_t apparatus_dim() const { return dims_.apparatus; }
    const Dims& dims() const { return dims_; }
    double hbar() const { return hbar_; }
    std::size_t gate_count() const { return gate_ops_.size(); }

    const ComplexMatrix& hamiltonian() const { return hamiltonian_; }
    const ComplexMatrix& step_unitary() const { return step_unitary_; }
    const std::vector<ComplexMatrix>& gate_operators() const { return gate_ops_; }
    const ComplexMatrix& gate_operator(std::size_t j) const { return gate_ops_.at(j); }

    StateVector collapsed_state(std::size_t j, const StateVector& /*xi*/) const {
        return qla::basis_vector(j, dims_.system);
    }

  private:
    friend Apparatus build_apparatus(const ComplexMatrix&, Dims, double);

    Dims dims_;
    double hbar_ = 1.0;
    ComplexMatrix hamiltonian_;
    ComplexMatrix step_unitary_;
    std::vector<ComplexMatrix> gate_ops_;
};

inline Apparatus build_apparatus(const ComplexMatrix& hamiltonian, Dims dims, double hbar = 1.0) {
    if (dims.system == 0 || dims.apparatus == 0) {
        throw DimensionMismatch("apparatus dimensions must be >= 1");
    }
    const auto d = static_cast<Eigen::Index>(dims.combined());
    if (hamiltonian.rows() != d || hamiltonian.cols() != d) {
        throw DimensionMismatch("Hamiltonian is " + std::to_string(hamiltonian.rows()) + "x" +
                                std::to_string(hamiltonian.cols()) + ", expected " +
                                std::to_string(d) + "x" + std::to_string(d));
    }
    qla::require_hermitian(hamiltonian, "Hamiltonian");

    Apparatus app;
    app.dims_ = dims;
    app.hbar_ = hbar;
    app.hamiltonian_ = hamiltonian;
    app.step_unitary_ = qla::evolution_operator(hamiltonian, 1.0, hbar);
    app.gate_ops_.reserve(dims.system);
    for (std::size_t j = 0; j < dims.system; ++j) {
        app.gate_ops_.push_back(qla::partial_trace_W(
            qla::gate_projector(j, dims.system, dims.apparatus) * app.step_unitary_, dims.system,
            dims.apparatus));
    }
    return app;
}

/// Anything that exposes gate operators on V and a post-measurement state.
template <typename T>
concept GateModel = requires(const T& g, std::size_t k, const StateVector& xi) {
    { g.gate_operators() } -> std::convertible_to<const std::vector<ComplexMatrix>&>;
    { g.system_dim() } -> std::convertible_to<std::size_t>;
    { g.collapsed_state(k, xi) } -> std::convertible_to<StateVector>;
};

/// Gate energies with their conserved total. Each entry carries a Neumaier
/// compensation term so the total stays tight over millions of updates.
class EnergyLedger {
  public:
    EnergyLedger() = default;

    explicit EnergyLedger(std::vector<double> initial)
        : sum_(std::move(initial)), comp_(sum_.size(), 0.0) {
        total_ = compensated_total();
    }

    static EnergyLedger zeros(std::size_t n) { return EnergyLedger(std::vector<double>(n, 0.0)); }

    std::size_t size() const { return sum_.size(); }
    double energy(std::size_t j) const { return sum_.at(j) + comp_.at(j); }
    double conserved_total() const { return total_; }
    std::size_t history_len() const { return history_; }

    std::vector<double> energies() const {
        std::vector<double> out(sum_.size());
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] = sum_[j] + comp_[j];
        }
        return out;
    }

    double current_total() const { return compensated_total(); }

    /// |sum_j rho_j - C|
    double conservation_error() const { return std::abs(current_total() - total_); }

    void add(std::size_t j, double x) {
        double& s = sum_.at(j);
        const double t = s + x;
        if (std::abs(s) >= std::abs(x)) {
            comp_[j] += (s - t) + x;
        } else {
            comp_[j] += (x - t) + s;
        }
        s = t;
    }

    void record_measurement() { ++history_; }

  private:
    double compensated_total() const {
        double s = 0.0;
        double c = 0.0;
        auto accumulate = [&](double x) {
            const double t = s + x;
            c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
            s = t;
        };
        for (std::size_t j = 0; j < sum_.size(); ++j) {
            accumulate(sum_[j]);
            accumulate(comp_[j]);
        }
        return s + c;
    }

    std::vector<double> sum_;
    std::vector<double> comp_;
    double total_ = 0.0;
    std::size_t history_ = 0;
};

struct MeasurementOutcome {
    std::vector<double> closeness; // normalized, sums to 1
    std::size_t chosen = 0;
    StateVector collapsed_state;
    std::vector<double> ledger_before;
    std::vector<double> ledger_after;
    std::vector<std::size_t> disregarded;
};

/// Unnormalized closeness c_j = |M_j xi|^2 for a list of gate operators.
inline std::vector<double> closeness(std::span<const ComplexMatrix> gate_ops, const StateVector& xi) {
    std::vector<double> c;
    c.reserve(gate_ops.size());
    for (const auto& op : gate_ops) {
        if (op.cols() != xi.size()) {
            throw DimensionMismatch("state has dim " + std::to_string(xi.size()) +
                                    ", gates act on dim " + std::to_string(op.cols()));
        }
        c.push_back((op * xi).squaredNorm());
    }
    return c;
}

template <GateModel Model>
std::vector<double> closeness(const Model& model, const StateVector& xi) {
    return closeness(std::span<const ComplexMatrix>(model.gate_operators()), xi);
}

struct NormalizedState {
    StateVector state;
    std::vector<double> closeness;
};

inline NormalizedState normalize_closeness(const StateVector& xi, std::vector<double> raw) {
    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (!(total > tol::closed_gate)) {
        throw AllGatesClosed("state has zero closeness to every gate (sum " +
                             std::to_string(total) + ")");
    }
    for (auto& c : raw) {
        c /= total;
    }
    return {xi / std::sqrt(total), std::move(raw)};
}

/// Scales xi so its closeness vector sums to one.
template <GateModel Model>
NormalizedState normalize_for_measurement(const Model& model, const StateVector& xi) {
    return normalize_closeness(xi, closeness(model, xi));
}

/// (W_j, rho_j) > (W_k, rho_k): larger energy wins, ties (within 1e-12) go to the larger index.
inline bool gate_greater(std::size_t j, double rho_j, std::size_t k, double rho_k) {
    if (std::abs(rho_j - rho_k) <= tol::energy_tie) {
        return j > k;
    }
    return rho_j > rho_k;
}

struct Selection {
    std::size_t chosen = 0;
    std::vector<std::size_t> disregarded;
    std::vector<double> ledger_before;
    std::vector<double> ledger_after;
};

/// Steps 1-3 of a measurement for an already normalized closeness vector.
inline Selection select_gate(EnergyLedger& ledger, std::span<const double> closeness) {
    if (closeness.size() != ledger.size()) {
        throw DimensionMismatch("ledger has " + std::to_string(ledger.size()) + " gates, closeness has " +
                                std::to_string(closeness.size()));
    }
    Selection sel;
    sel.ledger_before = ledger.energies();

    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < closeness.size(); ++j) {
        if (closeness[j] <= tol::closed_gate) {
            sel.disregarded.push_back(j);
        } else {
            active.push_back(j);
        }
    }
    if (active.empty()) {
        throw AllGatesClosed("no gate has positive closeness");
    }

    for (std::size_t j = 0; j < closeness.size(); ++j) {
        ledger.add(j, closeness[j]);
    }

    // Highest energy first, then the highest index among energies tied with it.
    double top = ledger.energy(active.front());
    for (auto j : active) {
        top = std::max(top, ledger.energy(j));
    }
    std::size_t chosen = active.front();
    for (auto j : active) {
        if (std::abs(ledger.energy(j) - top) <= tol::energy_tie) {
            chosen = j;
        }
    }

    ledger.add(chosen, -1.0);
    ledger.record_measurement();
    sel.chosen = chosen;
    sel.ledger_after = ledger.energies();
    return sel;
}

template <GateModel Model>
MeasurementOutcome measure(const Model& model, EnergyLedger& ledger, const StateVector& xi) {
    auto normalized = normalize_for_measurement(model, xi);
    auto sel = select_gate(ledger, normalized.closeness);
    MeasurementOutcome out;
    out.collapsed_state = model.collapsed_state(sel.chosen, normalized.state);
    out.closeness = std::move(normalized.closeness);
    out.chosen = sel.chosen;
    out.ledger_before = std::move(sel.ledger_before);
    out.ledger_after = std::move(sel.ledger_after);
    out.disregarded = std::move(sel.disregarded);
    return out;
}

/// U_hat_j(t) = U(t) U(1)^dagger P_{v_j (x) W} U(1): the branch of the evolution ending at gate j.
inline ComplexMatrix u_hat_j(const Apparatus& app, std::size_t j, double t) {
    const auto& u1 = app.step_unitary();
    return qla::evolution_operator(app.hamiltonian(), t, app.hbar()) * u1.adjoint() *
           qla::gate_projector(j, app.system_dim(), app.apparatus_dim()) * u1;
}

/// U_j(t) xi = Tr_W(U_hat_j(t)) xi, the branch as seen from the system alone.
inline StateVector u_j_trace(const Apparatus& app, std::size_t j, double t, const StateVector& xi) {
    if (static_cast<std::size_t>(xi.size()) != app.system_dim()) {
        throw DimensionMismatch("u_j_trace: state has dim " + std::to_string(xi.size()));
    }
    return qla::partial_trace_W(u_hat_j(app, j, t), app.system_dim(), app.apparatus_dim()) * xi;
}

/// max-entry residual of i hbar dU_hat_j/dt - H_hat U_hat_j(t), with a central difference of step h.
inline double schrodinger_residual(const Apparatus& app, std::size_t j, double t, double h) {
    const Complex i_hbar(0.0, app.hbar());
    const ComplexMatrix derivative = (u_hat_j(app, j, t + h) - u_hat_j(app, j, t - h)) / (2.0 * h);
    return qla::max_abs(i_hbar * derivative - app.hamiltonian() * u_hat_j(app, j, t));
}

/// r_j = || Tr_W(H_hat P_j U(1)) - H M_j ||_max for each gate.
inline std::vector<double> independence_residual(const Apparatus& app, const ComplexMatrix& system_hamiltonian) {
    const auto n = app.system_dim();
    if (static_cast<std::size_t>(system_hamiltonian.rows()) != n ||
        static_cast<std::size_t>(system_hamiltonian.cols()) != n) {
        throw DimensionMismatch("system Hamiltonian must be " + std::to_string(n) + "x" + std::to_string(n));
    }
    qla::require_hermitian(system_hamiltonian, "system Hamiltonian");
    std::vector<double> r;
    r.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        const ComplexMatrix lhs = qla::partial_trace_W(
            app.hamiltonian() * qla::gate_projector(j, n, app.apparatus_dim()) * app.step_unitary(), n,
            app.apparatus_dim());
        r.push_back(qla::max_abs(lhs - system_hamiltonian * app.gate_operator(j)));
    }
    return r;
}

inline bool independence_compatible(std::span<const double> residuals) {
    return std::all_of(residuals.begin(), residuals.end(), [](double r) { return r < tol::independence; });
}

/// Combined Hamiltonians for the shipped apparatus modes.
namespace presets {

inline ComplexMatrix diagonal(std::span<const double> values) {
    const auto n = static_cast<Eigen::Index>(values.size());
    ComplexMatrix d = ComplexMatrix::Zero(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        d(k, k) = values[static_cast<std::size_t>(k)];
    }
    return d;
}

inline ComplexMatrix identity(std::size_t n) {
    const auto ni = static_cast<Eigen::Index>(n);
    return ComplexMatrix::Identity(ni, ni);
}

/// H_hat = 0: nothing evolves.
inline ComplexMatrix trivial(Dims dims) {
    const auto d = static_cast<Eigen::Index>(dims.combined());
    return ComplexMatrix::Zero(d, d);
}

/// H_hat = diag(system_energies) (x) I_m. Closeness is m^2 |<v_j, xi>|^2.
inline ComplexMatrix ideal(std::span<const double> system_energies, std::size_t m) {
    return qla::tensor_product(diagonal(system_energies), identity(m));
}

/// H_hat = H_S (x) I_m + I_N (x) H_M with both factors diagonal.
inline ComplexMatrix product(std::span<const double> system_energies, std::span<const double> apparatus_energies) {
    return qla::tensor_product(diagonal(system_energies), identity(apparatus_energies.size())) +
           qla::tensor_product(identity(system_energies.size()), diagonal(apparatus_energies));
}

/// Seeded dense Hermitian coupling on V (x) W.
inline ComplexMatrix random(Dims dims, std::uint64_t seed) {
    return qla::random_hermitian(dims.combined(), seed);
}

} // namespace presets

} // namespace gatesim
