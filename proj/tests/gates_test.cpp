#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "gatesim/gates.hpp"
#include "oracles.hpp"

using namespace gatesim;
using qla::max_abs;

namespace {

ComplexMatrix identity(std::size_t n) { return presets::identity(n); }

StateVector real_state(std::initializer_list<double> amps) {
    StateVector v(static_cast<Eigen::Index>(amps.size()));
    Eigen::Index k = 0;
    for (double a : amps) {
        v(k++) = a;
    }
    return v;
}

StateVector random_state(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    StateVector v(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        v(k) = qla::complex_normal(rng);
    }
    return v;
}

Apparatus ideal_apparatus(std::vector<double> energies, std::size_t m) {
    return build_apparatus(presets::ideal(energies, m), Dims{energies.size(), m});
}

// U(1) = X (x) I_m: the system basis vectors are swapped.
Apparatus swapping_apparatus(std::size_t m) {
    ComplexMatrix x(2, 2);
    x << 0.0, 1.0, 1.0, 0.0;
    const ComplexMatrix hs = (std::numbers::pi / 2.0) * (identity(2) - x);
    return build_apparatus(qla::tensor_product(hs, identity(m)), Dims{2, m});
}

// U(1) = I_2 (x) diag(1, -1): Tr_W U(1) = 0, so every gate is closed.
Apparatus gate_annihilating_apparatus() {
    const std::vector<double> sys{0.0, 0.0};
    const std::vector<double> app{0.0, std::numbers::pi};
    return build_apparatus(presets::product(sys, app), Dims{2, 2});
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s;
}

} // namespace

TEST(BuildApparatus, TrivialDynamics) {
    const auto app = build_apparatus(presets::trivial(Dims{2, 2}), Dims{2, 2});
    for (std::size_t j = 0; j < 2; ++j) {
        const StateVector v = qla::basis_vector(j, 2);
        EXPECT_LE(max_abs(app.gate_operator(j) - 2.0 * v * v.adjoint()), 1e-15);
    }
}

TEST(BuildApparatus, IdealModeClosedForm) {
    const std::vector<double> lambda{0.3, -1.2, 2.5};
    const std::size_t m = 4;
    const auto app = ideal_apparatus(lambda, m);
    for (std::size_t j = 0; j < lambda.size(); ++j) {
        const StateVector v = qla::basis_vector(j, lambda.size());
        const ComplexMatrix expected = static_cast<double>(m) * std::polar(1.0, -lambda[j]) * v * v.adjoint();
        EXPECT_LE(max_abs(app.gate_operator(j) - expected), 1e-13);
    }
}

TEST(BuildApparatus, RandomCouplingInvariants) {
    const Dims dims{3, 2};
    const auto app = build_apparatus(presets::random(dims, 5), dims);
    EXPECT_LE(max_abs(app.step_unitary() - qla::evolution_operator(app.hamiltonian(), 1.0)), 1e-9);
    EXPECT_TRUE(qla::is_unitary(app.step_unitary()));
    ComplexMatrix total = ComplexMatrix::Zero(3, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        const ComplexMatrix p = qla::gate_projector(j, 3, 2);
        EXPECT_LE(max_abs(app.gate_operator(j) - oracle::partial_trace(p * app.step_unitary(), 3, 2)), 1e-14);
        total += app.gate_operator(j);
    }
    EXPECT_LE(max_abs(total - qla::partial_trace_W(app.step_unitary(), 3, 2)), 1e-9);
}

TEST(BuildApparatus, GateOperatorsAreRankOneInTheirGate) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Dims dims{2 + seed % 3, 1 + seed % 4};
        const auto app = build_apparatus(presets::random(dims, seed), dims);
        for (std::size_t j = 0; j < dims.system; ++j) {
            const auto& op = app.gate_operator(j);
            Eigen::JacobiSVD<ComplexMatrix> svd(op);
            EXPECT_LT(svd.singularValues()(1), 1e-10);
            const StateVector v = qla::basis_vector(j, dims.system);
            const ComplexMatrix off_gate = identity(dims.system) - v * v.adjoint();
            EXPECT_LT(max_abs(off_gate * op), 1e-10);
        }
    }
}

TEST(BuildApparatus, RejectsBadInput) {
    ComplexMatrix h = ComplexMatrix::Zero(4, 4);
    h(0, 3) = 1.0;
    EXPECT_THROW(build_apparatus(h, Dims{2, 2}), NonHermitianInput);
    EXPECT_THROW(build_apparatus(ComplexMatrix::Zero(4, 4), Dims{3, 2}), DimensionMismatch);
    EXPECT_THROW(build_apparatus(ComplexMatrix::Zero(0, 0), Dims{0, 2}), DimensionMismatch);
}

TEST(Closeness, EigenstateIsCertain) {
    const auto app = ideal_apparatus({0.0, 1.0, 2.0}, 3);
    const auto c = closeness(app, qla::basis_vector(0, 3));
    EXPECT_NEAR(c[0], 9.0, 1e-12);
    EXPECT_EQ(c[1], 0.0);
    EXPECT_EQ(c[2], 0.0);
}

TEST(Closeness, IdealModeScalesBornWeightsByMSquared) {
    const auto app = ideal_apparatus({0.0, 1.0}, 2);
    const double r = 1.0 / std::sqrt(2.0);
    const auto c = closeness(app, real_state({r, r}));
    EXPECT_NEAR(c[0], 2.0, 1e-12);
    EXPECT_NEAR(c[1], 2.0, 1e-12);
}

TEST(Closeness, VanishesWhenEvolutionMovesStateAway) {
    const auto app = swapping_apparatus(2);
    const auto c = closeness(app, qla::basis_vector(0, 2));
    EXPECT_LE(c[0], 1e-28);
    EXPECT_NEAR(c[1], 4.0, 1e-12);
}

TEST(Closeness, MatchesDefiningSum) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dims dims{2 + seed % 3, 1 + seed % 3};
        const auto app = build_apparatus(presets::random(dims, seed), dims);
        const auto xi = random_state(dims.system, seed + 50);
        const auto c = closeness(app, xi);
        for (std::size_t j = 0; j < dims.system; ++j) {
            const ComplexMatrix p = oracle::coordinate_projector({j}, dims.system);
            EXPECT_NEAR(c[j], oracle::closeness(app.step_unitary(), p, xi, dims.apparatus), 1e-12);
        }
    }
}

TEST(Closeness, DimensionMismatch) {
    const auto app = ideal_apparatus({0.0, 1.0}, 2);
    EXPECT_THROW(closeness(app, StateVector::Ones(3)), DimensionMismatch);
}

TEST(NormalizeForMeasurement, RecoversBornWeights) {
    const auto app = ideal_apparatus({0.0, 1.0}, 2);
    const auto norm = normalize_for_measurement(app, real_state({std::sqrt(0.7), std::sqrt(0.3)}));
    EXPECT_NEAR(norm.closeness[0], 0.7, 1e-12);
    EXPECT_NEAR(norm.closeness[1], 0.3, 1e-12);
    EXPECT_NEAR(sum(closeness(app, norm.state)), 1.0, 1e-12);
}

TEST(NormalizeForMeasurement, Idempotent) {
    const Dims dims{3, 2};
    const auto app = build_apparatus(presets::random(dims, 9), dims);
    const auto once = normalize_for_measurement(app, random_state(3, 1));
    const auto twice = normalize_for_measurement(app, once.state);
    EXPECT_LE(max_abs(once.state - twice.state), 1e-12);
}

TEST(NormalizeForMeasurement, AllGatesClosed) {
    const auto app = gate_annihilating_apparatus();
    EXPECT_THROW(normalize_for_measurement(app, real_state({0.6, 0.8})), AllGatesClosed);
    EXPECT_THROW(normalize_for_measurement(ideal_apparatus({0.0, 1.0}, 2), StateVector::Zero(2)), AllGatesClosed);
}

TEST(GateGreater, OrderAndTieRule) {
    EXPECT_TRUE(gate_greater(0, 0.7, 1, 0.3));
    EXPECT_FALSE(gate_greater(0, 0.5, 1, 0.5));
    EXPECT_TRUE(gate_greater(1, 0.5, 0, 0.5));
    // 0.5 + 0.0 and 0.2 + 0.3 differ in the last bit but tie.
    EXPECT_TRUE(gate_greater(1, 0.2 + 0.3, 0, 0.5 + 0.0));
    EXPECT_TRUE(gate_greater(0, 0.5 + 2e-12, 1, 0.5));
}

TEST(GateGreater, TotalOrderOnDistinctPairs) {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t a = trial % 5;
        const std::size_t b = (trial + 1 + trial / 5 % 4) % 5;
        if (a == b) {
            continue;
        }
        const double ra = trial % 3 == 0 ? 0.25 : rng.uniform(-1.0, 1.0);
        const double rb = trial % 3 == 0 ? 0.25 : rng.uniform(-1.0, 1.0);
        EXPECT_NE(gate_greater(a, ra, b, rb), gate_greater(b, rb, a, ra));
    }
}

TEST(Measure, SingleStepUpdate) {
    const auto app = ideal_apparatus({0.0, 1.0}, 2);
    auto ledger = EnergyLedger::zeros(2);
    const auto out = measure(app, ledger, real_state({std::sqrt(0.7), std::sqrt(0.3)}));
    EXPECT_EQ(out.chosen, 0u);
    EXPECT_NEAR(ledger.energy(0), -0.3, 1e-12);
    EXPECT_NEAR(ledger.energy(1), 0.3, 1e-12);
    EXPECT_LE(max_abs(out.collapsed_state - qla::basis_vector(0, 2)), 0.0);
    EXPECT_EQ(ledger.history_len(), 1u);
}

TEST(Measure, TieGoesToHigherIndex) {
    const auto app = ideal_apparatus({0.0, 1.0}, 2);
    auto ledger = EnergyLedger::zeros(2);
    const double r = 1.0 / std::sqrt(2.0);
    const auto out = measure(app, ledger, real_state({r, r}));
    EXPECT_EQ(out.chosen, 1u);
    EXPECT_NEAR(ledger.energy(0), 0.5, 1e-12);
    EXPECT_NEAR(ledger.energy(1), -0.5, 1e-12);
}

TEST(Measure, DisregardedGateIsNeverChosen) {
    const auto app = ideal_apparatus({0.0, 1.0, 2.0}, 3);
    EnergyLedger ledger({100.0, 0.0, 0.0});
    const auto out = measure(app, ledger, real_state({0.0, std::sqrt(0.4), std::sqrt(0.6)}));
    ASSERT_EQ(out.disregarded, std::vector<std::size_t>{0});
    EXPECT_NE(out.chosen, 0u);
    EXPECT_EQ(out.chosen, 2u);
    EXPECT_EQ(ledger.energy(0), 100.0);
}

TEST(Measure, DisregardsGatesClosedByTheEvolution) {
    const auto app = swapping_apparatus(2);
    EnergyLedger ledger({50.0, 0.0});
    const auto out = measure(app, ledger, qla::basis_vector(0, 2));
    EXPECT_EQ(out.chosen, 1u);
    EXPECT_EQ(out.disregarded, std::vector<std::size_t>{0});
}

TEST(Measure, PropagatesAllGatesClosed) {
    const auto app = gate_annihilating_apparatus();
    auto ledger = EnergyLedger::zeros(2);
    EXPECT_THROW(measure(app, ledger, real_state({1.0, 0.0})), AllGatesClosed);
    EXPECT_EQ(ledger.history_len(), 0u);
}

// Invariants of a single measurement on random apparatuses, ledgers and states.
TEST(Measure, OutcomeInvariants) {
    Rng rng(2024);
    for (std::uint64_t trial = 0; trial < 200; ++trial) {
        const Dims dims{2 + trial % 4, 1 + trial % 3};
        const auto app = build_apparatus(presets::random(dims, trial), dims);
        std::vector<double> rho(dims.system);
        for (auto& r : rho) {
            r = rng.uniform(-3.0, 3.0);
        }
        const auto xi = random_state(dims.system, trial + 7);
        EnergyLedger ledger(rho);
        EnergyLedger twin(rho);
        EnergyLedger scaled_ledger(rho);

        const auto out = measure(app, ledger, xi);
        const auto again = measure(app, twin, xi);
        const auto scaled = measure(app, scaled_ledger, Complex(-2.5, 0.75) * xi);

        EXPECT_NEAR(sum(out.closeness), 1.0, 1e-12);
        EXPECT_GT(out.closeness[out.chosen], 0.0);
        EXPECT_EQ(std::count(out.disregarded.begin(), out.disregarded.end(), out.chosen), 0);
        for (std::size_t j = 0; j < dims.system; ++j) {
            const double expected = out.ledger_before[j] + out.closeness[j] - (j == out.chosen ? 1.0 : 0.0);
            EXPECT_NEAR(out.ledger_after[j], expected, 1e-12);
        }
        for (std::size_t k = 0; k < dims.system; ++k) {
            if (k == out.chosen || out.closeness[k] <= tol::closed_gate) {
                continue;
            }
            const double rho_k = out.ledger_before[k] + out.closeness[k];
            const double rho_0 = out.ledger_before[out.chosen] + out.closeness[out.chosen];
            EXPECT_FALSE(gate_greater(k, rho_k, out.chosen, rho_0)) << "trial " << trial;
        }
        EXPECT_LE(ledger.conservation_error(), 1e-9 * 2);

        EXPECT_EQ(again.chosen, out.chosen);
        EXPECT_EQ(again.ledger_after, out.ledger_after);
        EXPECT_EQ(again.closeness, out.closeness);
        EXPECT_EQ(scaled.chosen, out.chosen) << "trial " << trial;
    }
}

TEST(EnergyLedger, ConservationOverLongRun) {
    const auto app = ideal_apparatus({0.0, 1.0, 2.0}, 2);
    EnergyLedger ledger({0.1, -0.2, 0.3});
    const auto xi = real_state({0.3, 0.5, std::sqrt(1.0 - 0.09 - 0.25)});
    for (int step = 0; step < 100000; ++step) {
        measure(app, ledger, xi);
    }
    EXPECT_LE(ledger.conservation_error(), 1e-9 * (ledger.history_len() + 1));
    EXPECT_NEAR(ledger.conserved_total(), 0.2, 1e-15);
}

TEST(UHatJ, AtUnitTimeIsProjectedStep) {
    const Dims dims{3, 2};
    const auto app = build_apparatus(presets::random(dims, 11), dims);
    for (std::size_t j = 0; j < 3; ++j) {
        const ComplexMatrix expected = qla::gate_projector(j, 3, 2) * app.step_unitary();
        EXPECT_LE(max_abs(u_hat_j(app, j, 1.0) - expected), 1e-12);
    }
}

TEST(UHatJ, BranchesSumToTheEvolution) {
    const Dims dims{3, 2};
    const auto app = build_apparatus(presets::random(dims, 12), dims);
    for (double t : {0.0, 0.37, 1.0}) {
        ComplexMatrix total = ComplexMatrix::Zero(6, 6);
        for (std::size_t j = 0; j < 3; ++j) {
            total += u_hat_j(app, j, t);
        }
        EXPECT_LT(max_abs(total - qla::evolution_operator(app.hamiltonian(), t)), 1e-9) << "t=" << t;
    }
}

TEST(UHatJ, TrivialDynamicsLeavesProjector) {
    const auto app = build_apparatus(presets::trivial(Dims{2, 3}), Dims{2, 3});
    for (double t : {0.0, 0.5, 2.0}) {
        EXPECT_LE(max_abs(u_hat_j(app, 1, t) - qla::gate_projector(1, 2, 3)), 1e-15);
    }
    EXPECT_THROW(u_hat_j(app, 2, 0.0), IndexOutOfRange);
}

TEST(UJTrace, AtUnitTimeGivesCloseness) {
    const Dims dims{3, 2};
    const auto app = build_apparatus(presets::random(dims, 13), dims);
    const auto xi = random_state(3, 4);
    const auto c = closeness(app, xi);
    for (std::size_t j = 0; j < 3; ++j) {
        const auto v = u_j_trace(app, j, 1.0, xi);
        EXPECT_LE(max_abs(v - app.gate_operator(j) * xi), 1e-12);
        EXPECT_NEAR(v.squaredNorm(), c[j], 1e-12);
    }
}

TEST(UJTrace, TrivialDynamics) {
    const auto app = build_apparatus(presets::trivial(Dims{3, 2}), Dims{3, 2});
    const auto xi = random_state(3, 8);
    for (double t : {0.0, 0.4}) {
        const auto v = u_j_trace(app, 2, t, xi);
        EXPECT_LE(max_abs(v - 2.0 * xi(2) * qla::basis_vector(2, 3)), 1e-15);
    }
    EXPECT_THROW(u_j_trace(app, 0, 0.0, StateVector::Ones(2)), DimensionMismatch);
}

TEST(UJTrace, CentralDifferenceSatisfiesSchrodinger) {
    const Dims dims{2, 3};
    const auto app = build_apparatus(presets::random(dims, 21), dims, 0.8);
    const auto xi = random_state(2, 22);
    const Complex i_hbar(0.0, app.hbar());
    const double t = 0.6;
    auto residual = [&](double h) {
        const StateVector lhs = i_hbar * (u_j_trace(app, 1, t + h, xi) - u_j_trace(app, 1, t - h, xi)) / (2.0 * h);
        const StateVector rhs = qla::partial_trace_W(app.hamiltonian() * u_hat_j(app, 1, t), 2, 3) * xi;
        return max_abs(lhs - rhs);
    };
    const double coarse = residual(1e-2);
    const double fine = residual(5e-3);
    EXPECT_LT(residual(1e-4), 1e-6);
    // Halving h quarters the truncation error.
    EXPECT_NEAR(coarse / fine, 4.0, 0.1);
    EXPECT_LT(schrodinger_residual(app, 1, t, 1e-4), 1e-6 * std::pow(max_abs(app.hamiltonian()), 2));
}

TEST(IndependenceResidual, ProductHamiltonianPasses) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ComplexMatrix hs = qla::random_hermitian(3, seed);
        const auto app = build_apparatus(qla::tensor_product(hs, identity(2)), Dims{3, 2});
        const auto r = independence_residual(app, hs);
        for (double x : r) {
            EXPECT_LT(x, 1e-10);
        }
        EXPECT_TRUE(independence_compatible(r));
    }
}

TEST(IndependenceResidual, ZeroHamiltonianIsExactlyZero) {
    const auto app = build_apparatus(presets::trivial(Dims{3, 2}), Dims{3, 2});
    for (double x : independence_residual(app, ComplexMatrix::Zero(3, 3))) {
        EXPECT_EQ(x, 0.0);
    }
}

TEST(IndependenceResidual, RandomCouplingFails) {
    const Dims dims{3, 2};
    const auto app = build_apparatus(presets::random(dims, 7), dims);
    const ComplexMatrix reduced = qla::partial_trace_W(app.hamiltonian(), 3, 2) / 2.0;
    const auto r = independence_residual(app, reduced);
    EXPECT_GT(*std::max_element(r.begin(), r.end()), 1e-6);
    EXPECT_FALSE(independence_compatible(r));
    EXPECT_THROW(independence_residual(app, ComplexMatrix::Zero(2, 2)), DimensionMismatch);
}

TEST(ChangeBasis, MeasuresAlongRotatedBasis) {
    const std::size_t n = 3;
    const std::size_t m = 2;
    const ComplexMatrix q = qla::random_unitary(n, 99);
    const std::vector<double> lambda{0.5, -0.25, 1.5};
    const ComplexMatrix hs = q * presets::diagonal(lambda) * q.adjoint();
    const ComplexMatrix rotated = qla::change_basis(qla::tensor_product(hs, identity(m)), q, m);
    EXPECT_LE(max_abs(rotated - presets::ideal(lambda, m)), 1e-12);

    const auto app = build_apparatus(rotated, Dims{n, m});
    const auto xi = random_state(n, 100);
    const auto c = normalize_for_measurement(app, q.adjoint() * xi).closeness;
    for (std::size_t j = 0; j < n; ++j) {
        const double born = std::norm(q.col(static_cast<Eigen::Index>(j)).dot(xi)) / xi.squaredNorm();
        EXPECT_NEAR(c[j], born, 1e-12);
    }
}
