#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "tsas/case_factory.hpp"
#include "tsas/grid_io.hpp"

using namespace tsas;

namespace {

GridCase ring3() {
    GridCase g;
    g.name = "ring3";
    g.buses = {{1, {}}, {2, {}}, {3, {}}};
    g.branches = {{1, 2, {0.0, 0.1}}, {2, 3, {0.0, 0.1}}, {3, 1, {0.0, 0.1}}};
    g.machines = {{1, 5.0, 0.0, 0.2, 0.5, 1.05}, {2, 3.0, 0.0, 0.2, 0.3, 1.02}};
    g.loads = {{3, {0.8, 0.2}}};
    return g;
}

TrajectoryRecord synthetic_record(std::size_t frames, std::size_t buses, double angle_shift,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(0.8, 1.1), ang(-1.0, 1.0);
    TrajectoryRecord r;
    for (std::size_t t = 0; t < frames; ++t) {
        PhasorFrame f;
        f.cycle_index = static_cast<int>(t + 1);
        for (std::size_t b = 0; b < buses; ++b) {
            f.magnitudes.push_back(mag(rng));
            f.angles.push_back(wrap_angle(ang(rng) + angle_shift));
        }
        r.frames.push_back(f);
    }
    return r;
}

Dataset synthetic_dataset(std::size_t cases, std::size_t frames, std::size_t buses, AngleMode mode,
                          std::uint64_t seed) {
    Dataset d;
    d.bus_count = buses;
    d.frames = frames;
    d.grid_name = "synthetic";
    d.angle_mode = mode;
    for (std::size_t k = 0; k < cases; ++k) {
        LabeledSequence s;
        s.case_id = "case" + std::to_string(k);
        s.features = build_feature_sequence(synthetic_record(frames, buses, 0.0, seed + k), frames, mode);
        s.label = label_from_delta_max(k % 3 == 0 ? 500.0 : 90.0);
        s.delta_max = k % 3 == 0 ? 500.0 : 90.0;
        s.spec.fault = Fault::at_bus(1);
        s.spec.clearing_time = 0.1 + 0.001 * static_cast<double>(k);
        d.cases.push_back(std::move(s));
    }
    return d;
}

std::set<std::string> ids(const Dataset& d) {
    std::set<std::string> out;
    for (const auto& c : d.cases) out.insert(c.case_id);
    return out;
}

}  // namespace

TEST(Enumeration, NominalRingCount) {
    ProtocolRules rules;
    rules.n_minus_1 = false;
    // 3 load levels x (3 bus faults + 3 lines x 4 positions)
    EXPECT_EQ(enumerate_contingencies(ring3(), rules, 1).size(), 45u);
}

TEST(Enumeration, NMinusOneRingCountExcludesTheOutagedLine) {
    ProtocolRules rules;
    // nominal 45, plus 3 outages x 3 levels x (3 bus faults + 2 lines x 4 positions)
    const auto specs = enumerate_contingencies(ring3(), rules, 1);
    EXPECT_EQ(specs.size(), 144u);
    for (const auto& s : specs)
        if (s.out_branch && s.fault.kind == Fault::Kind::line) EXPECT_NE(s.fault.branch, *s.out_branch);
    std::set<std::string> seen;
    for (const auto& s : specs) EXPECT_TRUE(seen.insert(s.case_id()).second) << s.case_id();
}

TEST(Enumeration, SkipsOutagesThatIslandTheNetwork) {
    // Radial wscc9 generator step-up transformers cannot be taken out.
    ProtocolRules rules;
    rules.nominal_topology = false;
    rules.load_levels = {1.0};
    rules.line_faults = false;
    const auto specs = enumerate_contingencies(wscc9_grid(), rules, 3);
    std::set<std::size_t> outages;
    for (const auto& s : specs) outages.insert(*s.out_branch);
    EXPECT_EQ(outages, (std::set<std::size_t>{3, 4, 5, 6, 7, 8}));
    EXPECT_EQ(specs.size(), 6u * 9u);
}

TEST(Enumeration, ClearingTimesStayInTheWindow) {
    ProtocolRules rules;
    rules.clearing = {0.12, 0.2};
    for (const auto& s : enumerate_contingencies(wscc9_grid(), rules, 9)) {
        EXPECT_GE(s.clearing_time, 0.12);
        EXPECT_LE(s.clearing_time, 0.2);
    }
}

TEST(Enumeration, IsDeterministicPerSeed) {
    ProtocolRules rules;
    const auto a = enumerate_contingencies(wscc9_grid(), rules, 17);
    const auto b = enumerate_contingencies(wscc9_grid(), rules, 17);
    const auto c = enumerate_contingencies(wscc9_grid(), rules, 18);
    ASSERT_EQ(a.size(), b.size());
    bool any_difference = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].case_id(), b[k].case_id());
        EXPECT_EQ(a[k].clearing_time, b[k].clearing_time);
        EXPECT_EQ(a[k].seed, b[k].seed);
        any_difference |= a[k].clearing_time != c[k].clearing_time;
    }
    EXPECT_TRUE(any_difference);
}

TEST(Enumeration, SubsamplingKeepsOrderAndCount) {
    ProtocolRules rules;
    const auto full = enumerate_contingencies(wscc9_grid(), rules, 4);
    rules.target_count = 100;
    const auto sub = enumerate_contingencies(wscc9_grid(), rules, 4);
    ASSERT_EQ(sub.size(), 100u);
    std::vector<std::string> order;
    for (const auto& s : full) order.push_back(s.case_id());
    std::size_t last = 0;
    for (const auto& s : sub) {
        const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), s.case_id()) - order.begin());
        ASSERT_LT(pos, order.size());
        EXPECT_EQ(s.clearing_time, full[pos].clearing_time);
        EXPECT_GE(pos + 1, last + 1);
        last = pos;
    }
}

TEST(Enumeration, RejectsBadRules) {
    ProtocolRules rules;
    rules.fault_positions = {0.5};
    EXPECT_THROW(enumerate_contingencies(ring3(), rules, 1), Error);
    rules = {};
    rules.clearing = {0.3, 0.2};
    EXPECT_THROW(enumerate_contingencies(ring3(), rules, 1), Error);
    rules = {};
    rules.nominal_topology = rules.n_minus_1 = false;
    EXPECT_THROW(enumerate_contingencies(ring3(), rules, 1), Error);
}

TEST(Features, ShapeAndLayout) {
    const auto r = synthetic_record(20, 9, 0.0, 3);
    const auto f = build_feature_sequence(r, 5, AngleMode::raw);
    ASSERT_EQ(f.rows(), 5);
    ASSERT_EQ(f.cols(), 18);
    for (int t = 0; t < 5; ++t)
        for (int b = 0; b < 9; ++b) {
            EXPECT_NEAR(f(t, b), r.frames[t].magnitudes[b], 1e-12);
            EXPECT_NEAR(f(t, 9 + b), r.frames[t].angles[b], 1e-12);
        }
}

TEST(Features, RelativeAnglesIgnoreAUniformRotation) {
    const auto a = build_feature_sequence(synthetic_record(6, 9, 0.0, 11), 6);
    const auto b = build_feature_sequence(synthetic_record(6, 9, 2.5, 11), 6);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
    // Circular mean of the relative angles is zero.
    for (int t = 0; t < 6; ++t) {
        Complex sum{0.0, 0.0};
        for (int k = 0; k < 9; ++k) sum += std::polar(1.0, a(t, 9 + k));
        EXPECT_NEAR(std::arg(sum), 0.0, 1e-12);
    }
}

TEST(Features, TooFewFramesIsAnError) {
    EXPECT_THROW(build_feature_sequence(synthetic_record(4, 3, 0.0, 1), 5), Error);
}

TEST(Split, ThreeToOneIsDisjointAndDeterministic) {
    const auto data = synthetic_dataset(100, 2, 2, AngleMode::relative, 1);
    const auto [train, test] = split_dataset(data, 3, 1, 77);
    EXPECT_EQ(train.size(), 75u);
    EXPECT_EQ(test.size(), 25u);
    const auto a = ids(train), b = ids(test);
    for (const auto& id : b) EXPECT_EQ(a.count(id), 0u);
    EXPECT_EQ(a.size() + b.size(), 100u);
    const auto again = split_dataset(data, 3, 1, 77);
    EXPECT_EQ(ids(again.first), a);
    EXPECT_NE(ids(split_dataset(data, 3, 1, 78).first), a);
    EXPECT_THROW(split_dataset(synthetic_dataset(3, 2, 2, AngleMode::relative, 1), 3, 1, 1), Error);
}

TEST(Noise, ZeroBoundLeavesDataUnchanged) {
    const auto data = synthetic_dataset(4, 5, 3, AngleMode::relative, 2);
    const auto same = inject_pmu_noise(data, 0.0, 1);
    for (std::size_t k = 0; k < data.size(); ++k) EXPECT_EQ(same.cases[k].features, data.cases[k].features);
}

TEST(Noise, PerturbationStaysInsideTheBoundAndKeepsLabels) {
    const auto data = synthetic_dataset(6, 20, 9, AngleMode::raw, 5);
    NoiseAudit audit;
    const auto noisy = inject_pmu_noise(data, 0.01, 8, &audit);
    EXPECT_LE(audit.max_ratio, 0.01);
    for (std::size_t k = 0; k < data.size(); ++k) {
        EXPECT_EQ(noisy.cases[k].label.y, data.cases[k].label.y);
        EXPECT_EQ(noisy.cases[k].label.eta, data.cases[k].label.eta);
        const auto& a = data.cases[k].features;
        const auto& b = noisy.cases[k].features;
        for (Eigen::Index t = 0; t < a.rows(); ++t)
            for (Eigen::Index n = 0; n < 9; ++n) {
                const Complex clean = std::polar(a(t, n), a(t, 9 + n));
                const Complex dirty = std::polar(b(t, n), b(t, 9 + n));
                EXPECT_LE(std::abs(dirty - clean) / std::abs(clean), 0.01 + 1e-12);
            }
    }
}

TEST(Noise, UniformDiscMeanRatioIsTwoThirdsOfTheBound) {
    // E|e|/|V| for a uniform disc of radius r is 2r/3.
    const auto data = synthetic_dataset(1, 10000, 10, AngleMode::raw, 6);
    NoiseAudit audit;
    inject_pmu_noise(data, 0.01, 21, &audit);
    EXPECT_EQ(audit.samples, 100000u);
    EXPECT_NEAR(audit.mean_ratio, 0.01 * 2.0 / 3.0, 0.02 * 0.01 * 2.0 / 3.0);
}

TEST(Noise, IsSeeded) {
    const auto data = synthetic_dataset(2, 5, 3, AngleMode::relative, 2);
    const auto a = inject_pmu_noise(data, 0.01, 4);
    const auto b = inject_pmu_noise(data, 0.01, 4);
    const auto c = inject_pmu_noise(data, 0.01, 5);
    EXPECT_EQ(a.cases[0].features, b.cases[0].features);
    EXPECT_NE(a.cases[0].features, c.cases[0].features);
    EXPECT_THROW(inject_pmu_noise(data, 1.5, 1), Error);
}

TEST(Subset, SelectsAndReReferencesBuses) {
    const auto data = synthetic_dataset(2, 4, 5, AngleMode::raw, 3);
    const auto sub = select_buses(data, {3, 1});
    ASSERT_EQ(sub.bus_count, 2u);
    const auto& full = data.cases[0].features;
    const auto& part = sub.cases[0].features;
    ASSERT_EQ(part.cols(), 4);
    EXPECT_NEAR(part(2, 0), full(2, 3), 1e-12);
    EXPECT_NEAR(part(2, 1), full(2, 1), 1e-12);
    EXPECT_NEAR(part(2, 2), full(2, 5 + 3), 1e-12);
    EXPECT_THROW(select_buses(data, {}), Error);
    EXPECT_THROW(select_buses(data, {1, 1}), Error);
    EXPECT_THROW(select_buses(data, {5}), Error);
}

TEST(Subset, TruncateKeepsLeadingFrames) {
    const auto data = synthetic_dataset(2, 6, 3, AngleMode::relative, 3);
    const auto cut = truncate_frames(data, 4);
    EXPECT_EQ(cut.frames, 4u);
    EXPECT_EQ(cut.cases[1].features, FeatureMatrix(data.cases[1].features.topRows(4)));
    EXPECT_THROW(truncate_frames(data, 7), Error);
    EXPECT_THROW(truncate_frames(data, 0), Error);
}

TEST(Persistence, RoundTripIsBitExact) {
    auto data = synthetic_dataset(5, 7, 4, AngleMode::relative, 12);
    data.cases[2].spec.fault = Fault::on_line(3, 0.6);
    data.cases[2].spec.out_branch = 1;
    std::stringstream buf;
    write_dataset(buf, data);
    const auto back = read_dataset(buf);
    ASSERT_EQ(back.size(), data.size());
    EXPECT_EQ(back.bus_count, data.bus_count);
    EXPECT_EQ(back.frames, data.frames);
    for (std::size_t k = 0; k < data.size(); ++k) {
        EXPECT_EQ(back.cases[k].features, data.cases[k].features);
        EXPECT_EQ(back.cases[k].label.eta, data.cases[k].label.eta);
        EXPECT_EQ(back.cases[k].spec.case_id(), data.cases[k].spec.case_id());
        EXPECT_EQ(back.cases[k].spec.clearing_time, data.cases[k].spec.clearing_time);
    }
    std::stringstream again;
    write_dataset(again, back);
    EXPECT_EQ(again.str(), buf.str());
}

TEST(Persistence, RejectsCorruptFiles) {
    std::stringstream empty;
    EXPECT_THROW(read_dataset(empty), Error);
    std::stringstream bad("{\"format\":\"other\"}\n");
    EXPECT_THROW(read_dataset(bad), Error);
    auto data = synthetic_dataset(2, 3, 2, AngleMode::relative, 1);
    std::stringstream buf;
    write_dataset(buf, data);
    std::string text = buf.str();
    text = text.substr(0, text.rfind('\n', text.size() - 2) + 1);  // drop the last case
    std::stringstream truncated(text);
    EXPECT_THROW(read_dataset(truncated), Error);
}

TEST(Generation, SmallWscc9BatchIsLabeledAndDeterministic) {
    const auto grid = wscc9_grid();
    ProtocolRules rules;
    rules.target_count = 8;
    const auto specs = enumerate_contingencies(grid, rules, 5);
    GenerationOptions opt;
    opt.frames = 6;
    opt.workers = 1;
    const auto a = generate_cases(grid, specs, opt, 5);
    opt.workers = 3;
    const auto b = generate_cases(grid, specs, opt, 5);
    ASSERT_EQ(a.size(), 8u);
    EXPECT_EQ(a.frames, 6u);
    EXPECT_EQ(a.feature_width(), 18u);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.cases[k].case_id, specs[k].case_id());
        EXPECT_EQ(a.cases[k].label.y, a.cases[k].delta_max < 360.0 ? 1 : 0);
        EXPECT_EQ(a.cases[k].features, b.cases[k].features);
        EXPECT_GT(a.cases[k].features.leftCols(9).minCoeff(), 0.0);
    }
}

TEST(Generation, CaseMatchesADirectSimulation) {
    const auto grid = wscc9_grid();
    ContingencySpec spec;
    spec.out_branch = 4;
    spec.load_ratio = 1.2;
    spec.fault = Fault::on_line(7, 0.4);
    spec.clearing_time = 0.15;
    GenerationOptions opt;
    opt.frames = 5;
    const auto loads = operating_load_admittance(scale_operating_point(grid, 1.2));
    const auto seq = generate_case(grid, spec, opt, loads);

    const auto g = scale_operating_point(with_branch_out(grid, 4), 1.2);
    SimulationConfig sim;
    sim.cycles_needed = 5;
    const auto r = simulate_case(g, apply_contingency_phases(g, spec.fault, 0.15), sim, loads);
    EXPECT_EQ(seq.delta_max, r.delta_max);
    EXPECT_EQ(seq.features, build_feature_sequence(r, 5));
}
