#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pcgm/hungarian.hpp"
#include "test_utils.hpp"

TEST_CASE("tiny assignment picks the diagonal") {
    Eigen::MatrixXd cost(2, 2);
    cost << 1, 2, 2, 1;
    auto c = pcgm::hungarian(cost, 10.0);
    CHECK(c.values(0, 0) == 1.0);
    CHECK(c.values(1, 1) == 1.0);
    CHECK(pcgm::assignment_cost(c, cost, 10.0) == Catch::Approx(2.0));
}

TEST_CASE("dominant unmatched cost leaves everything unmatched") {
    Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(3, 4, 5.0);
    auto c = pcgm::hungarian(cost, 1.0);
    CHECK(c.matched_pairs().empty());
    CHECK(pcgm::assignment_cost(c, cost, 1.0) == Catch::Approx(7.0));
}

TEST_CASE("matches brute force on random instances") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_int_distribution<int> dim(1, 7);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = dim(rng), n = dim(rng);
        Eigen::MatrixXd cost(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) cost(i, j) = u(rng);
        const double unmatched = u(rng) * 0.5;

        auto c = pcgm::hungarian(cost, unmatched);
        REQUIRE(c.feasible());
        const double got = pcgm::assignment_cost(c, cost, unmatched);
        const double expect = testutil::brute_force_assignment_cost(cost, unmatched);
        CHECK(got == Catch::Approx(expect).margin(1e-9));
    }
}

TEST_CASE("rectangular matrices are handled") {
    Eigen::MatrixXd cost(2, 4);
    cost << 9, 1, 9, 9,
            9, 9, 9, 1;
    auto c = pcgm::hungarian(cost, 3.0);
    auto pairs = c.matched_pairs();
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK(pairs[1] == std::pair<std::size_t, std::size_t>{1, 3});
}

TEST_CASE("non-finite costs are rejected") {
    Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(2, 2, std::nan(""));
    CHECK_THROWS_AS(pcgm::hungarian(cost, 1.0), std::invalid_argument);
}
