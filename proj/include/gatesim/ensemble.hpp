#pragma once

// Repeated measurements and the long-run claims of the gate model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gatesim/errors.hpp"
#include "gatesim/gates.hpp"
#include "gatesim/qla.hpp"
#include "gatesim/random.hpp"

namespace gatesim {

/// Interval (lower, upper) that every gate energy stays strictly inside.
///
/// With C the ledger total and C_act the total over gates the state can reach,
/// lower = min(-(|C| + 4), -(|C_act| + 4), min_j rho_j - 1) and
/// upper = C - (N - 1) * lower. For a zeroed ledger this is (-(|C|+4), C + (N-1)(|C|+4)).
struct LedgerBounds {
    double lower = 0.0;
    double upper = 0.0;
};

inline LedgerBounds derive_bounds(std::span<const double> energies, std::span<const double> closeness) {
    double total = 0.0;
    double active_total = 0.0;
    double lowest = energies.empty() ? 0.0 : energies.front();
    for (std::size_t j = 0; j < energies.size(); ++j) {
        total += energies[j];
        if (closeness[j] > tol::closed_gate) {
            active_total += energies[j];
        }
        lowest = std::min(lowest, energies[j]);
    }
    LedgerBounds b;
    b.lower = std::min({-(std::abs(total) + 4.0), -(std::abs(active_total) + 4.0), lowest - 1.0});
    b.upper = total - static_cast<double>(energies.size() - 1) * b.lower;
    return b;
}

struct RunStatistics {
    std::size_t n = 0;
    std::vector<std::size_t> counts;
    std::vector<double> closeness_ref;
    double max_deviation = 0.0; // max over prefixes and gates of |n' c_j - n_j|
    double bound_B = 0.0;
    double bound_upper = 0.0;
    // max_j |rho_j(0) + applied perturbations_j|; zero for a zeroed, unperturbed ledger.
    double offset = 0.0;
    std::size_t violations = 0;
    std::vector<std::size_t> outcomes;
};

/// One row of the per-step stream.
struct StepRecord {
    std::size_t step = 0; // 1-based
    std::size_t chosen = 0;
    std::span<const double> closeness;
    std::span<const double> energies;
    double deviation = 0.0; // max_j |step * c_j - n_j| at this step
};

struct Perturbation {
    double magnitude = 0.0;
    std::size_t period = 0; // perturb after every `period` measurements; 0 disables
    std::uint64_t seed = 0;
};

struct RunOptions {
    std::optional<Perturbation> perturb;
    bool throw_on_violation = true;
    bool keep_outcomes = true;
};

/// Zero-sum noise with entries drawn uniformly from [-magnitude, magnitude] before centering.
inline std::vector<double> perturbation_noise(std::size_t n, double magnitude, std::uint64_t seed) {
    if (magnitude < 0.0) {
        throw std::invalid_argument("perturbation magnitude must be >= 0");
    }
    std::vector<double> noise(n, 0.0);
    if (magnitude == 0.0 || n < 2) {
        return noise;
    }
    Rng rng(seed);
    double mean = 0.0;
    for (auto& x : noise) {
        x = rng.uniform(-magnitude, magnitude);
        mean += x;
    }
    mean /= static_cast<double>(n);
    double head = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) {
        noise[j] -= mean;
        head += noise[j];
    }
    noise[n - 1] = -head;
    return noise;
}

/// Random zero-sum change of the gate energies; C and the history are kept.
inline EnergyLedger perturb_energies(const EnergyLedger& ledger, double magnitude, std::uint64_t seed) {
    EnergyLedger out = ledger;
    const auto noise = perturbation_noise(ledger.size(), magnitude, seed);
    for (std::size_t j = 0; j < noise.size(); ++j) {
        if (noise[j] != 0.0) {
            out.add(j, noise[j]);
        }
    }
    return out;
}

inline double count_deviation(std::span<const std::size_t> counts, std::span<const double> c, std::size_t n) {
    double dev = 0.0;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        dev = std::max(dev, std::abs(static_cast<double>(n) * c[j] - static_cast<double>(counts[j])));
    }
    return dev;
}

// A single gate always sits exactly at C = upper, so the upper check is strict only for N >= 2.
inline bool within_bounds(std::span<const double> energies, const LedgerBounds& b) {
    const bool single = energies.size() == 1;
    return std::all_of(energies.begin(), energies.end(),
                       [&](double rho) { return rho > b.lower && (single || rho < b.upper); });
}

struct NoSink {
    void operator()(const StepRecord&) const {}
};

/// Drives n measurements through `step(ledger) -> (chosen, energies after)`,
/// tracking counts against the fixed closeness `c` and checking the ledger bounds
/// after every step. Shared by the plain and the entangled runners.
template <typename StepFn, typename Sink>
RunStatistics run_sequence(std::span<const double> c, EnergyLedger& ledger, std::size_t n,
                           const RunOptions& options, StepFn&& step_fn, Sink&& sink) {
    if (ledger.size() != c.size()) {
        throw DimensionMismatch("ledger has " + std::to_string(ledger.size()) + " gates, model has " +
                                std::to_string(c.size()));
    }
    RunStatistics stats;
    stats.counts.assign(c.size(), 0);
    stats.closeness_ref.assign(c.begin(), c.end());

    std::vector<double> drift = ledger.energies();
    auto bounds = derive_bounds(drift, c);
    for (double d : drift) {
        stats.offset = std::max(stats.offset, std::abs(d));
    }
    if (options.keep_outcomes) {
        stats.outcomes.reserve(n);
    }

    for (std::size_t step = 1; step <= n; ++step) {
        const auto [chosen, energies] = step_fn(ledger);
        ++stats.counts[chosen];
        if (options.keep_outcomes) {
            stats.outcomes.push_back(chosen);
        }

        const double dev = count_deviation(stats.counts, c, step);
        stats.max_deviation = std::max(stats.max_deviation, dev);

        if (!within_bounds(energies, bounds)) {
            ++stats.violations;
            if (options.throw_on_violation) {
                throw BoundViolation("gate energy left (" + std::to_string(bounds.lower) + ", " +
                                     std::to_string(bounds.upper) + ") at step " + std::to_string(step));
            }
        }
        sink(StepRecord{step, chosen, c, energies, dev});

        // Perturbations act between measurements, so none follows the last one.
        if (options.perturb && options.perturb->period > 0 && step % options.perturb->period == 0 && step < n) {
            const auto noise = perturbation_noise(ledger.size(), options.perturb->magnitude,
                                                  derive_seed(options.perturb->seed, step));
            for (std::size_t j = 0; j < noise.size(); ++j) {
                if (noise[j] != 0.0) {
                    ledger.add(j, noise[j]);
                }
                drift[j] += noise[j];
                stats.offset = std::max(stats.offset, std::abs(drift[j]));
            }
            const auto fresh = derive_bounds(ledger.energies(), c);
            bounds.lower = std::min(bounds.lower, fresh.lower);
            bounds.upper = std::max(bounds.upper, fresh.upper);
        }
    }

    stats.n = n;
    stats.bound_B = bounds.lower;
    stats.bound_upper = bounds.upper;
    return stats;
}

/// Measures the same state n times on one ledger, checking the ledger bounds after every step.
template <GateModel Model, typename Sink = NoSink>
RunStatistics run_repeated(const Model& model, EnergyLedger& ledger, const StateVector& xi, std::size_t n,
                           const RunOptions& options = {}, Sink&& sink = {}) {
    const auto c = normalize_for_measurement(model, xi).closeness;
    return run_sequence(
        c, ledger, n, options,
        [&](EnergyLedger& l) {
            auto out = measure(model, l, xi);
            return std::pair{out.chosen, std::move(out.ledger_after)};
        },
        std::forward<Sink>(sink));
}

/// Envelope on max_j |n_j/n - c_j| implied by the ledger bounds.
inline double born_envelope(const RunStatistics& stats) {
    if (stats.n == 0) {
        return 0.0;
    }
    return (std::max(std::abs(stats.bound_B), stats.bound_upper) + stats.offset) / static_cast<double>(stats.n);
}

inline double frequency_deviation(const RunStatistics& stats) {
    if (stats.n == 0) {
        return 0.0;
    }
    return count_deviation(stats.counts, stats.closeness_ref, stats.n) / static_cast<double>(stats.n);
}

/// True iff max_j |n_j/n - c_j| <= max(|B|, C - (N-1)B)/n + tolerance.
inline bool born_limit_check(const RunStatistics& stats, double tolerance) {
    return frequency_deviation(stats) <= born_envelope(stats) + tolerance;
}

/// n outcomes drawn independently from c. Only counts, n and closeness_ref are filled.
inline RunStatistics iid_reference(std::span<const double> c, std::size_t n, std::uint64_t seed) {
    RunStatistics stats;
    stats.n = n;
    stats.counts.assign(c.size(), 0);
    stats.closeness_ref.assign(c.begin(), c.end());
    if (c.empty()) {
        return stats;
    }
    std::vector<double> cumulative(c.size());
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < c.size(); ++j) {
        acc += c[j];
        cumulative[j] = acc;
        if (c[j] > 0.0) {
            last_positive = j;
        }
    }
    Rng rng(seed);
    for (std::size_t s = 0; s < n; ++s) {
        const double u = rng.uniform() * acc;
        std::size_t pick = last_positive;
        for (std::size_t j = 0; j < cumulative.size(); ++j) {
            if (u < cumulative[j] && c[j] > 0.0) {
                pick = j;
                break;
            }
        }
        ++stats.counts[pick];
    }
    return stats;
}

/// Gates v_j (x) V2 (x) W for a system entangled with a partner space V2.
/// The combined space is ordered V1 (x) V2 (x) W, system-major.
class EntangledApparatus {
  public:
    EntangledApparatus(Apparatus base, std::size_t partner_dim) : base_(std::move(base)), partner_dim_(partner_dim) {
        if (partner_dim_ == 0) {
            throw DimensionMismatch("partner dimension must be >= 1");
        }
        const auto n = static_cast<Eigen::Index>(base_.system_dim());
        const auto m = static_cast<Eigen::Index>(base_.apparatus_dim());
        const auto d2 = static_cast<Eigen::Index>(partner_dim_);
        const auto& u1 = base_.step_unitary();

        // U1 acts on (a, i); the partner index b is carried through untouched.
        extended_unitary_ = ComplexMatrix::Zero(n * d2 * m, n * d2 * m);
        for (Eigen::Index a = 0; a < n; ++a) {
            for (Eigen::Index i = 0; i < m; ++i) {
                for (Eigen::Index a2 = 0; a2 < n; ++a2) {
                    for (Eigen::Index i2 = 0; i2 < m; ++i2) {
                        const Complex u = u1(a * m + i, a2 * m + i2);
                        for (Eigen::Index b = 0; b < d2; ++b) {
                            extended_unitary_((a * d2 + b) * m + i, (a2 * d2 + b) * m + i2) = u;
                        }
                    }
                }
            }
        }

        const auto pair_dim = base_.system_dim() * partner_dim_;
        gate_ops_.reserve(base_.system_dim());
        for (std::size_t j = 0; j < base_.system_dim(); ++j) {
            const ComplexMatrix projector =
                qla::gate_projector(j, base_.system_dim(), partner_dim_ * base_.apparatus_dim());
            gate_ops_.push_back(
                qla::partial_trace_W(projector * extended_unitary_, pair_dim, base_.apparatus_dim()));
        }
    }

    const Apparatus& base() const { return base_; }
    std::size_t partner_dim() const { return partner_dim_; }
    std::size_t pair_dim() const { return base_.system_dim() * partner_dim_; }
    const ComplexMatrix& extended_unitary() const { return extended_unitary_; }
    const std::vector<ComplexMatrix>& gate_operators() const { return gate_ops_; }

  private:
    Apparatus base_;
    std::size_t partner_dim_;
    ComplexMatrix extended_unitary_;
    std::vector<ComplexMatrix> gate_ops_;
};

struct EntangledOutcome {
    MeasurementOutcome outcome;
    StateVector partner; // <v_j0, xi>, unnormalized
};

/// Measures the V1 half of xi in V1 (x) V2; the ledger is the base apparatus' ledger.
inline EntangledOutcome measure_entangled(const EntangledApparatus& eapp, EnergyLedger& ledger,
                                          const StateVector& xi) {
    if (static_cast<std::size_t>(xi.size()) != eapp.pair_dim()) {
        throw DimensionMismatch("entangled state has dim " + std::to_string(xi.size()) + ", expected " +
                                std::to_string(eapp.pair_dim()));
    }
    auto normalized =
        normalize_closeness(xi, closeness(std::span<const ComplexMatrix>(eapp.gate_operators()), xi));
    auto sel = select_gate(ledger, normalized.closeness);

    EntangledOutcome out;
    const auto v = qla::basis_vector(sel.chosen, eapp.base().system_dim());
    out.partner = qla::partial_inner_left(v, xi);
    out.outcome.collapsed_state = v;
    out.outcome.closeness = std::move(normalized.closeness);
    out.outcome.chosen = sel.chosen;
    out.outcome.ledger_before = std::move(sel.ledger_before);
    out.outcome.ledger_after = std::move(sel.ledger_after);
    out.outcome.disregarded = std::move(sel.disregarded);
    return out;
}

/// Repeats the same entangled state n times on one shared ledger.
template <typename Sink = NoSink>
RunStatistics run_repeated_entangled(const EntangledApparatus& eapp, EnergyLedger& ledger, const StateVector& xi,
                                     std::size_t n, const RunOptions& options = {}, Sink&& sink = {}) {
    const auto c =
        normalize_closeness(xi, closeness(std::span<const ComplexMatrix>(eapp.gate_operators()), xi)).closeness;
    return run_sequence(
        c, ledger, n, options,
        [&](EnergyLedger& l) {
            auto out = measure_entangled(eapp, l, xi);
            return std::pair{out.outcome.chosen, std::move(out.outcome.ledger_after)};
        },
        std::forward<Sink>(sink));
}

/// Gates V_k (x) W for a partition of V into pairwise orthogonal subspaces.
class SubspaceApparatus {
  public:
    std::size_t system_dim() const { return base_.system_dim(); }
    std::size_t apparatus_dim() const { return base_.apparatus_dim(); }
    std::size_t gate_count() const { return gate_ops_.size(); }
    const Apparatus& base() const { return base_; }
    const std::vector<ComplexMatrix>& subspace_projectors() const { return projectors_; }
    const std::vector<ComplexMatrix>& gate_operators() const { return gate_ops_; }
    // Eigenvalue measured by each gate, when built from an observable.
    const std::vector<double>& labels() const { return labels_; }

    /// Normalized K_k xi, which lies in V_k.
    StateVector collapsed_state(std::size_t k, const StateVector& xi) const {
        StateVector v = gate_ops_.at(k) * xi;
        const double norm = v.norm();
        if (norm > 0.0) {
            v /= norm;
        }
        return v;
    }

  private:
    friend SubspaceApparatus build_subspace_apparatus(std::vector<ComplexMatrix>, const ComplexMatrix&,
                                                      std::size_t, double);
    friend SubspaceApparatus build_eigenspace_apparatus(const ComplexMatrix&, const ComplexMatrix&, std::size_t,
                                                        double, double);

    Apparatus base_;
    std::vector<ComplexMatrix> projectors_;
    std::vector<ComplexMatrix> gate_ops_;
    std::vector<double> labels_;
};

inline void require_partition(const std::vector<ComplexMatrix>& projectors, std::size_t n) {
    constexpr double eps = 1e-10;
    if (projectors.empty()) {
        throw NotAPartition("no subspaces given");
    }
    const auto ni = static_cast<Eigen::Index>(n);
    ComplexMatrix total = ComplexMatrix::Zero(ni, ni);
    for (std::size_t a = 0; a < projectors.size(); ++a) {
        const auto& p = projectors[a];
        if (p.rows() != ni || p.cols() != ni) {
            throw NotAPartition("projector " + std::to_string(a) + " is not " + std::to_string(n) + "x" +
                                std::to_string(n));
        }
        if (qla::max_abs(p - p.adjoint()) > eps || qla::max_abs(p * p - p) > eps) {
            throw NotAPartition("matrix " + std::to_string(a) + " is not an orthogonal projector");
        }
        for (std::size_t b = 0; b < a; ++b) {
            if (qla::max_abs(p * projectors[b]) > eps) {
                throw NotAPartition("projectors " + std::to_string(b) + " and " + std::to_string(a) +
                                    " are not orthogonal");
            }
        }
        total += p;
    }
    if (qla::max_abs(total - ComplexMatrix::Identity(ni, ni)) > eps) {
        throw NotAPartition("projectors do not sum to the identity");
    }
}

inline SubspaceApparatus build_subspace_apparatus(std::vector<ComplexMatrix> projectors,
                                                  const ComplexMatrix& hamiltonian, std::size_t m,
                                                  double hbar = 1.0) {
    if (m == 0 || hamiltonian.rows() % static_cast<Eigen::Index>(m) != 0) {
        throw DimensionMismatch("Hamiltonian dimension is not a multiple of m");
    }
    const auto n = static_cast<std::size_t>(hamiltonian.rows()) / m;
    require_partition(projectors, n);

    SubspaceApparatus app;
    app.base_ = build_apparatus(hamiltonian, Dims{n, m}, hbar);
    app.projectors_ = std::move(projectors);
    for (const auto& p : app.projectors_) {
        app.gate_ops_.push_back(qla::partial_trace_W(qla::lift_projector(p, m) * app.base_.step_unitary(), n, m));
    }
    return app;
}

/// Projectors onto coordinate subspaces; groups hold 0-based basis indices.
inline std::vector<ComplexMatrix> projectors_from_groups(const std::vector<std::vector<std::size_t>>& groups,
                                                         std::size_t n) {
    std::vector<ComplexMatrix> out;
    out.reserve(groups.size());
    const auto ni = static_cast<Eigen::Index>(n);
    for (const auto& group : groups) {
        ComplexMatrix p = ComplexMatrix::Zero(ni, ni);
        for (auto idx : group) {
            const StateVector v = qla::basis_vector(idx, n);
            p += v * v.adjoint();
        }
        out.push_back(std::move(p));
    }
    return out;
}

/// One gate per distinct eigenvalue of an observable (eigenvalues closer than
/// `merge` are one eigenspace); labels() reports the eigenvalue each gate measures.
inline SubspaceApparatus build_eigenspace_apparatus(const ComplexMatrix& observable, const ComplexMatrix& hamiltonian,
                                                    std::size_t m, double hbar = 1.0, double merge = 1e-9) {
    qla::require_hermitian(observable, "observable");
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(0.5 * (observable + observable.adjoint()));
    const auto& lambda = eig.eigenvalues();
    const auto& q = eig.eigenvectors();

    std::vector<ComplexMatrix> projectors;
    std::vector<double> labels;
    for (Eigen::Index k = 0; k < lambda.size();) {
        Eigen::Index end = k + 1;
        while (end < lambda.size() && lambda(end) - lambda(end - 1) <= merge) {
            ++end;
        }
        const auto block = q.middleCols(k, end - k);
        projectors.push_back(block * block.adjoint());
        labels.push_back(lambda.segment(k, end - k).mean());
        k = end;
    }
    auto app = build_subspace_apparatus(std::move(projectors), hamiltonian, m, hbar);
    app.labels_ = std::move(labels);
    return app;
}

struct Collision {
    std::size_t j = 0;
    std::size_t k = 0;
    long m_j = 0;
    long n_j = 0;
    long m_k = 0;
    long n_k = 0;
};

/// All integer quadruples with |.| <= horizon for which
/// rho0_j + m_j + n_j c_j equals rho0_k + m_k + n_k c_k within 1e-12 (pairs j < k).
/// An empty result certifies tie-free selection up to that horizon.
inline std::vector<Collision> generic_init_check(std::span<const double> rho0, std::span<const double> c,
                                                 long horizon) {
    if (horizon < 1) {
        throw std::invalid_argument("search horizon must be >= 1");
    }
    if (rho0.size() != c.size()) {
        throw DimensionMismatch("energies and closeness differ in length");
    }
    std::vector<Collision> hits;
    for (std::size_t j = 0; j < rho0.size(); ++j) {
        for (std::size_t k = j + 1; k < rho0.size(); ++k) {
            for (long mj = -horizon; mj <= horizon; ++mj) {
                for (long nj = -horizon; nj <= horizon; ++nj) {
                    const double lhs = rho0[j] + static_cast<double>(mj) + static_cast<double>(nj) * c[j];
                    for (long mk = -horizon; mk <= horizon; ++mk) {
                        for (long nk = -horizon; nk <= horizon; ++nk) {
                            const double rhs =
                                rho0[k] + static_cast<double>(mk) + static_cast<double>(nk) * c[k];
                            if (std::abs(lhs - rhs) <= tol::energy_tie) {
                                hits.push_back({j, k, mj, nj, mk, nk});
                            }
                        }
                    }
                }
            }
        }
    }
    return hits;
}

} // namespace gatesim
