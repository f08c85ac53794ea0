#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <atomic>
#include <cstdlib>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gcm/dataset.hpp"
#include "gcm/normal.hpp"
#include "gcm/parallel.hpp"
#include "gcm/rng.hpp"

using namespace gcm;

// Known-answer vectors published with the Random123 reference
// implementation of Philox4x32-10.
TEST(Philox, KnownAnswers) {
    using C = Philox4x32::Counter;
    EXPECT_EQ(Philox4x32::block(C{0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
              (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Rng, SameAddressSameOutput) {
    Rng a(42, Stream::model, 7), b(42, Stream::model, 7);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, DifferentAddressesDiffer) {
    std::set<std::uint64_t> firsts;
    for (auto s : {Stream::model, Stream::test, Stream::mc})
        for (std::uint64_t sub : {std::uint64_t{0}, std::uint64_t{1}, substream_of(1, 0)}) firsts.insert(Rng(42, s, sub)());
    firsts.insert(Rng(43, Stream::model, 0)());
    EXPECT_EQ(firsts.size(), 10u);
}

TEST(Rng, UniformMoments) {
    Rng rng(1, Stream::user);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sum_sq += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.005);
    EXPECT_NEAR(sum_sq / n - 0.25, 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
    Rng rng(2, Stream::user);
    const int n = 200000;
    double m1 = 0, m2 = 0, m4 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        m1 += z;
        m2 += z * z;
        m4 += z * z * z * z;
    }
    EXPECT_NEAR(m1 / n, 0.0, 0.01);
    EXPECT_NEAR(m2 / n, 1.0, 0.015);
    EXPECT_NEAR(m4 / n, 3.0, 0.1);
}

TEST(Rng, UniformIntCoversRangeEvenly) {
    Rng rng(3, Stream::user);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_int(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Normal, CdfAgreesWithBoost) {
    const boost::math::normal_distribution<double> ref;
    for (double x = -8.0; x <= 8.0; x += 0.01) {
        EXPECT_NEAR(normal_cdf(x), boost::math::cdf(ref, x), 1e-15);
        const double sf = boost::math::cdf(boost::math::complement(ref, x));
        EXPECT_NEAR(normal_sf(x), sf, 1e-9 * sf + 1e-300);
    }
}

TEST(Normal, QuantileAgreesWithBoost) {
    const boost::math::normal_distribution<double> ref;
    for (double p : {1e-12, 1e-8, 1e-4, 0.001, 0.01, 0.025, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.975, 0.99,
                     0.999, 1 - 1e-8}) {
        const double q = boost::math::quantile(ref, p);
        EXPECT_NEAR(normal_quantile(p), q, 1e-9 * std::max(1.0, std::fabs(q))) << "p = " << p;
    }
    EXPECT_THROW(normal_quantile(0.0), std::invalid_argument);
    EXPECT_THROW(normal_quantile(1.0), std::invalid_argument);
}

TEST(Normal, TwoSidedPValue) {
    EXPECT_DOUBLE_EQ(two_sided_p(0.0), 1.0);
    EXPECT_NEAR(two_sided_p(1.959964), 0.05, 1e-6);
    EXPECT_NEAR(two_sided_p(-1.959964), 0.05, 1e-6);
    double last = 1.0;
    for (double t = 0.1; t < 10.0; t += 0.1) {
        const double p = two_sided_p(t);
        EXPECT_LT(p, last);
        last = p;
    }
}

TEST(Csv, ParsesBlocksByPrefix) {
    std::istringstream in("z1, x1 ,y1,z2\n1,2,3,4\n5,6,7,8\n");
    const DataSet d = read_csv(in);
    EXPECT_EQ(d.n(), 2);
    EXPECT_EQ(d.dx(), 1);
    EXPECT_EQ(d.dy(), 1);
    EXPECT_EQ(d.dz(), 2);
    EXPECT_EQ(d.x()(1, 0), 6.0);
    EXPECT_EQ(d.z()(0, 1), 4.0);
}

TEST(Csv, RaggedRowNamesLine) {
    std::istringstream in("x1,y1,z1\n1,2,3\n4,5\n");
    try {
        read_csv(in);
        FAIL() << "expected CsvError";
    } catch (const CsvError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Csv, RejectsBadInput) {
    std::istringstream non_numeric("x1,y1,z1\n1,abc,3\n4,5,6\n");
    EXPECT_THROW(read_csv(non_numeric), CsvError);
    std::istringstream missing_block("x1,y1\n1,2\n3,4\n");
    EXPECT_THROW(read_csv(missing_block), InvalidInput);
    std::istringstream one_row("x1,y1,z1\n1,2,3\n");
    EXPECT_THROW(read_csv(one_row), InvalidInput);
    std::istringstream non_finite("x1,y1,z1\n1,2,3\n4,inf,6\n");
    EXPECT_THROW(read_csv(non_finite), InvalidInput);
}

TEST(Csv, RoundTripIsExact) {
    Rng rng(9, Stream::user);
    Matrix x(5, 2), y(5, 1), z(5, 3);
    for (auto* m : {&x, &y, &z})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal() * 1e3;
    const DataSet d(x, y, z);
    std::stringstream buf;
    write_csv(buf, d);
    const DataSet back = read_csv(buf);
    EXPECT_EQ(back.x(), d.x());
    EXPECT_EQ(back.y(), d.y());
    EXPECT_EQ(back.z(), d.z());
}

TEST(Parallel, VisitsEveryIndexOnce) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; }, 4);
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, RethrowsTaskFailure) {
    EXPECT_THROW(parallel_for(
                     50, [](std::size_t i) { if (i == 17) throw std::runtime_error("boom"); }, 3),
                 std::runtime_error);
}

TEST(Parallel, ThreadCapFromEnvironment) {
    ::setenv("GCM_THREADS", "3", 1);
    EXPECT_EQ(worker_count(), 3u);
    ::setenv("GCM_THREADS", "junk", 1);
    EXPECT_GE(worker_count(), 1u);
    ::unsetenv("GCM_THREADS");
}
