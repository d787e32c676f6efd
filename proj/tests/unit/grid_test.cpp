#include <gtest/gtest.h>

#include "tsas/grid_io.hpp"
#include "tsas/transient.hpp"

using namespace tsas;

namespace {

GridCase two_bus(Complex series_admittance) {
    GridCase g;
    g.name = "two-bus";
    g.buses = {{1, {}}, {2, {}}};
    g.branches = {{1, 2, 1.0 / series_admittance, 0.0, BranchStatus::in_service}};
    return g;
}

GridCase ring3(Complex z) {
    GridCase g;
    g.name = "ring3";
    g.buses = {{1, {}}, {2, {}}, {3, {}}};
    g.branches = {{1, 2, z, 0.0, BranchStatus::in_service},
                  {2, 3, z, 0.0, BranchStatus::in_service},
                  {3, 1, z, 0.0, BranchStatus::in_service}};
    return g;
}

double max_abs(const Eigen::MatrixXcd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Admittance, SingleBranchAssembly) {
    const Complex y{1.0, -10.0};
    const auto Y = build_admittance(two_bus(y));
    ASSERT_EQ(Y.order(), 2u);
    EXPECT_NEAR(std::abs(Y(0, 0) - y), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(Y(1, 1) - y), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(Y(0, 1) + y), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(Y(1, 0) + y), 0.0, 1e-12);
}

TEST(Admittance, OutOfServiceBranchIsExcluded) {
    auto g = two_bus({1.0, -10.0});
    g.branches[0].status = BranchStatus::out_of_service;
    const auto Y = build_admittance(g, false);
    EXPECT_EQ(max_abs(Y.values), 0.0);
}

TEST(Admittance, DisconnectedNetworkNamesIsolatedBuses) {
    auto g = two_bus({1.0, -10.0});
    g.branches[0].status = BranchStatus::out_of_service;
    try {
        build_admittance(g);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find('2'), std::string::npos) << e.what();
    }
}

TEST(Admittance, RingOfIdenticalLines) {
    const Complex z{0.01, 0.1};
    const Complex y = 1.0 / z;
    const auto Y = build_admittance(ring3(z));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            EXPECT_NEAR(std::abs(Y(r, c) - (r == c ? 2.0 * y : -y)), 0.0, 1e-12);
}

TEST(Admittance, Wscc9IsSymmetricAndRowSumsEqualShunts) {
    const auto g = wscc9_grid();
    const auto Y = build_admittance(g);
    EXPECT_LT(max_abs(Y.values - Y.values.transpose()), 1e-12);
    // Row sum = bus shunt + half the charging of every incident line.
    for (std::size_t k = 0; k < g.bus_count(); ++k) {
        Complex expected = g.buses[k].shunt;
        for (const auto& br : g.branches)
            if (g.bus_index(br.from) == k || g.bus_index(br.to) == k) expected += Complex(0.0, br.charging / 2.0);
        EXPECT_NEAR(std::abs(Y.values.row(k).sum() - expected), 0.0, 1e-9) << "bus " << k + 1;
    }
}

TEST(Admittance, RemovingABranchNeverIncreasesOtherCouplings) {
    const auto g = wscc9_grid();
    const auto Y = build_admittance(g);
    for (std::size_t b = 3; b < g.branches.size(); ++b) {
        const auto Yo = build_admittance(with_branch_out(g, b), false);
        for (std::size_t r = 0; r < g.bus_count(); ++r)
            for (std::size_t c = 0; c < g.bus_count(); ++c)
                if (r != c) EXPECT_LE(std::abs(Yo(r, c)), std::abs(Y(r, c)) + 1e-12);
    }
}

TEST(Kron, KeepingAllNodesIsIdentity) {
    const auto Y = build_admittance(wscc9_grid());
    std::vector<std::size_t> all(Y.order());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    EXPECT_EQ(max_abs(kron_reduce(Y, all).values - Y.values), 0.0);
}

TEST(Kron, StarEliminationMatchesDirectSolve) {
    // Boundary nodes 0..2 each tied to center node 3 by admittance y.
    const Complex y{2.0, -7.0};
    auto Y = AdmittanceMatrix::zero(4);
    for (std::size_t k = 0; k < 3; ++k) detail::stamp_branch(Y.values, k, 3, 1.0 / y, 0.0);
    const auto R = kron_reduce(Y, {0, 1, 2});

    // Oracle: column j of the reduced matrix is the boundary current for a
    // unit voltage at node j, with the center floating (zero injection).
    for (std::size_t j = 0; j < 3; ++j) {
        Eigen::Vector3cd v = Eigen::Vector3cd::Zero();
        v(j) = 1.0;
        const Complex center = (y * v.sum()) / (3.0 * y);
        for (std::size_t i = 0; i < 3; ++i) {
            const Complex current = y * (v(i) - center);
            EXPECT_NEAR(std::abs(R(i, j) - current), 0.0, 1e-12);
        }
    }
    EXPECT_NEAR(std::abs(R(0, 0) - 2.0 * y / 3.0), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(R(0, 1) + y / 3.0), 0.0, 1e-12);
}

TEST(Kron, SymmetricInputGivesSymmetricOutput) {
    const auto g = wscc9_grid();
    const auto full = augment_network(g, build_admittance(g), operating_load_admittance(g));
    const auto R = kron_reduce(full, internal_nodes(full, g.machine_count()));
    EXPECT_LT(max_abs(R.values - R.values.transpose()), 1e-12);
}

TEST(Kron, TwoStepEliminationEqualsOneStep) {
    const auto Y = build_admittance(wscc9_grid());
    const auto one = kron_reduce(Y, {0, 1, 2});
    const auto mid = kron_reduce(Y, {0, 1, 2, 3, 4, 5});
    const auto two = kron_reduce(mid, {0, 1, 2});
    EXPECT_LT(max_abs(one.values - two.values) / max_abs(one.values), 1e-10);
}

TEST(Kron, SingularEliminatedBlockIsAnError) {
    auto Y = AdmittanceMatrix::zero(3);
    detail::stamp_branch(Y.values, 0, 1, {0.0, 0.1}, 0.0);
    EXPECT_THROW(kron_reduce(Y, {0, 1}), Error);  // node 2 is isolated
}

TEST(Contingency, BusFaultAddsGroundingShuntOnly) {
    const auto g = wscc9_grid();
    const auto ph = apply_contingency_phases(g, Fault::at_bus(5), 0.2);
    Eigen::MatrixXcd diff = ph.fault_on.values - ph.prefault.values;
    EXPECT_NEAR(std::abs(diff(4, 4) - Complex(fault_shunt_admittance, 0.0)), 0.0, 1e-6);
    diff(4, 4) = 0.0;
    EXPECT_EQ(max_abs(diff), 0.0);
    EXPECT_EQ(max_abs(ph.postfault.values - ph.prefault.values), 0.0);
    EXPECT_DOUBLE_EQ(ph.clearing_time, 0.2);
}

// Series segments p*z and (1-p)*z through the fault node; eliminating the
// (ungrounded) fault node recovers the original branch.
TEST(Contingency, LineFaultSegmentsRecombineToTheOriginalBranch) {
    auto g = wscc9_grid();
    for (auto& br : g.branches) br.charging = 0.0;
    for (double p : {0.2, 0.4, 0.6, 0.8}) {
        const auto ph = apply_contingency_phases(g, Fault::on_line(4, p), 0.15);
        ASSERT_EQ(ph.fault_on.order(), g.bus_count() + 1);
        AdmittanceMatrix unfaulted = ph.fault_on;
        unfaulted.values(ph.fault_node, ph.fault_node) -= Complex(fault_shunt_admittance, 0.0);
        const auto recovered = kron_reduce(unfaulted, {0, 1, 2, 3, 4, 5, 6, 7, 8});
        EXPECT_LT(max_abs(recovered.values - ph.prefault.values), 1e-9) << "p=" << p;
    }
}

TEST(Contingency, LineFaultPostfaultRemovesTheBranch) {
    const auto g = wscc9_grid();
    const auto ph = apply_contingency_phases(g, Fault::on_line(7, 0.4), 0.3);
    const auto expected = build_admittance(with_branch_out(g, 7));
    EXPECT_LT(max_abs(ph.postfault.values - expected.values), 1e-12);
}

TEST(Contingency, RejectsInvalidFaults) {
    const auto g = wscc9_grid();
    EXPECT_THROW(apply_contingency_phases(g, Fault::on_line(4, 0.5), 0.2), Error);
    EXPECT_THROW(apply_contingency_phases(with_branch_out(g, 4), Fault::on_line(4, 0.2), 0.2), Error);
    EXPECT_THROW(apply_contingency_phases(g, Fault::at_bus(42), 0.2), Error);
    EXPECT_THROW(apply_contingency_phases(g, Fault::at_bus(5), 0.05), Error);
    EXPECT_THROW(apply_contingency_phases(g, Fault::at_bus(5), 0.45), Error);
}

TEST(OperatingPoint, UnitRatioIsIdentity) {
    const auto g = wscc9_grid();
    const auto s = scale_operating_point(g, 1.0);
    for (std::size_t i = 0; i < g.machine_count(); ++i) EXPECT_EQ(s.machines[i].pm, g.machines[i].pm);
    for (std::size_t i = 0; i < g.loads.size(); ++i) EXPECT_EQ(s.loads[i].power, g.loads[i].power);
}

TEST(OperatingPoint, ScalesGenerationAndLoad) {
    const auto g = wscc9_grid();
    const auto s = scale_operating_point(g, 0.8);
    for (std::size_t i = 0; i < g.machine_count(); ++i) {
        EXPECT_DOUBLE_EQ(s.machines[i].pm, 0.8 * g.machines[i].pm);
        EXPECT_EQ(s.machines[i].inertia, g.machines[i].inertia);
        EXPECT_EQ(s.machines[i].emf, g.machines[i].emf);
    }
    for (std::size_t i = 0; i < g.loads.size(); ++i) {
        EXPECT_DOUBLE_EQ(s.loads[i].power.real(), 0.8 * g.loads[i].power.real());
        EXPECT_DOUBLE_EQ(s.loads[i].power.imag(), 0.8 * g.loads[i].power.imag());
    }
}

TEST(OperatingPoint, ZeroLoadStaysZero) {
    auto g = wscc9_grid();
    g.loads.push_back({4, {0.0, 0.0}});
    const auto s = scale_operating_point(g, 1.2);
    EXPECT_EQ(s.loads.back().power, Complex(0.0, 0.0));
    EXPECT_THROW(scale_operating_point(g, 0.0), Error);
    EXPECT_THROW(scale_operating_point(g, -1.0), Error);
}

TEST(GridIo, JsonRoundTrip) {
    auto g = wscc9_grid();
    g.branches[2].status = BranchStatus::out_of_service;
    g.buses[3].shunt = {0.01, 0.2};
    const auto back = grid_from_json(nlohmann::json::parse(grid_to_json(g).dump()));
    EXPECT_EQ(back.name, g.name);
    ASSERT_EQ(back.bus_count(), g.bus_count());
    EXPECT_EQ(back.buses[3].shunt, g.buses[3].shunt);
    ASSERT_EQ(back.branches.size(), g.branches.size());
    EXPECT_FALSE(back.branches[2].in_service());
    EXPECT_EQ(back.branches[5].impedance, g.branches[5].impedance);
    ASSERT_EQ(back.machine_count(), g.machine_count());
    EXPECT_EQ(back.machines[1].xd_prime, g.machines[1].xd_prime);
    EXPECT_EQ(back.loads[2].power, g.loads[2].power);
}

TEST(GridIo, BuiltinsAndErrors) {
    EXPECT_EQ(load_grid("smib").bus_count(), 2u);
    EXPECT_EQ(load_grid("wscc9").machine_count(), 3u);
    EXPECT_THROW(load_grid("ne39"), Error);
    EXPECT_THROW(load_grid("/nonexistent/grid.json"), Error);
}

TEST(GridValidation, RejectsBrokenGrids) {
    auto g = wscc9_grid();
    g.machines[0].inertia = 0.0;
    EXPECT_THROW(validate(g), Error);
    g = wscc9_grid();
    g.branches[0].to = 99;
    EXPECT_THROW(validate(g), Error);
    g = wscc9_grid();
    g.branches[0].impedance = {0.0, 0.0};
    EXPECT_THROW(validate(g), Error);
    g = wscc9_grid();
    std::swap(g.buses[0], g.buses[1]);
    EXPECT_THROW(validate(g), Error);
}
