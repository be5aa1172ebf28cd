#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fedhpl/losses.hpp"
#include "fedhpl/rng.hpp"

using namespace fedhpl;
namespace adx = fedhpl::ad;

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t n, double span = 4.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-span, span);
    return v;
}

}  // namespace

TEST_CASE("softmax_temp basics") {
    const auto uniform = softmax_temp({0.0, 0.0, 0.0}, 3.3);
    for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // exp(1) / (exp(1) + exp(0)) at T = 2 for logits [2, 0].
    const auto two = softmax_temp({2.0, 0.0}, 2.0);
    CHECK(two[0] == doctest::Approx(0.73105857863000490).epsilon(1e-12));
    CHECK(two[1] == doctest::Approx(0.26894142136999512).epsilon(1e-12));

    CHECK_THROWS_AS(softmax_temp({1.0, 2.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax_temp({1.0, std::numeric_limits<double>::infinity()}, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(softmax_temp({std::nan("")}, 1.0), std::invalid_argument);
}

TEST_CASE("softmax_temp sums to one and is shift invariant") {
    Rng rng(derive_seed(11, "softmax-prop"));
    for (int trial = 0; trial < 200; ++trial) {
        const auto logits = random_logits(rng, 1 + rng.uniform_index(12));
        const double temperature = rng.uniform(0.25, 6.0);
        const auto p = softmax_temp(logits, temperature);
        double total = 0.0;
        for (double v : p) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-12);

        const double shift = rng.uniform(-50.0, 50.0);
        auto shifted = logits;
        for (auto& v : shifted) v += shift;
        const auto q = softmax_temp(shifted, temperature);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    }
}

TEST_CASE("ce_loss values") {
    std::vector<double> saturated(4, 0.0);
    saturated[2] = 1e6;
    CHECK(ce_loss(saturated, 2) == doctest::Approx(0.0).epsilon(1e-12));

    const std::vector<double> uniform(10, 0.25);
    CHECK(ce_loss(uniform, 3) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    CHECK_THROWS_AS(ce_loss(uniform, 10), std::invalid_argument);
}

TEST_CASE("ce gradient matches finite differences") {
    const auto x = adx::Tensor::leaf({5}, {0.2, -1.0, 0.8, 1.4, -0.3});
    const auto f = [](adx::Tape& tape, const adx::Tensor& logits) {
        return ce_loss_node(tape, logits, 3);
    };
    CHECK(adx::finite_diff_check(f, x, 1e-5) < 1e-6);
}

TEST_CASE("kd_loss identity and positivity") {
    const std::vector<double> p = {0.4, -1.2, 2.2};
    CHECK(kd_loss(p, p, 4.5) == doctest::Approx(0.0).epsilon(1e-15));

    Rng rng(derive_seed(13, "gibbs"));
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(9);
        const auto global = random_logits(rng, n);
        const auto local = random_logits(rng, n);
        const double temperature = rng.uniform(0.5, 6.0);
        CHECK(kd_loss(global, local, temperature) >= -1e-12);
    }

    CHECK_THROWS_AS(kd_loss({1.0, 2.0}, {1.0}, 4.5), std::invalid_argument);
}

TEST_CASE("kd decomposition") {
    const auto parts_uniform = kd_decompose({0.0, 0.0}, {1.0, -1.0}, 2.0);
    CHECK(parts_uniform.entropy == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const std::vector<double> p = {0.7, -0.7, 0.1};
    const auto parts_same = kd_decompose(p, p, 3.0);
    CHECK(parts_same.cross_entropy == doctest::Approx(parts_same.entropy).epsilon(1e-15));

    // One-hot-ish pair from the distillation loss definition.
    const std::vector<double> global = {1.0, 0.0};
    const std::vector<double> local = {0.0, 1.0};
    const auto parts = kd_decompose(global, local, 4.5);
    CHECK(kd_loss(global, local, 4.5) ==
          doctest::Approx(parts.cross_entropy - parts.entropy).epsilon(1e-12));

    Rng rng(derive_seed(17, "decompose"));
    for (int trial = 0; trial < 1000; ++trial) {
        const auto g = random_logits(rng, 5);
        const auto l = random_logits(rng, 5);
        const double temperature = rng.uniform(1.0, 5.0);
        const auto split = kd_decompose(g, l, temperature);
        CHECK(std::abs(kd_loss(g, l, temperature) - (split.cross_entropy - split.entropy)) <=
              1e-12);
    }
}

TEST_CASE("losses stay finite at magnitude 1e3") {
    const std::vector<double> big = {1000.0, -1000.0, 500.0};
    const std::vector<double> other = {-750.0, 250.0, 1000.0};
    CHECK(std::isfinite(ce_loss(big, 1)));
    CHECK(std::isfinite(kd_loss(big, other, 4.5)));
    CHECK(std::isfinite(kd_loss(big, other, 1.0)));
    const auto p = softmax_temp(big, 1.0);
    double total = 0.0;
    for (double v : p) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("total_objective composes ce and kd") {
    const std::vector<std::vector<double>> batch = {{1.2, -0.3, 0.4}, {-0.5, 0.9, 0.1}};
    const std::vector<int> labels = {0, 1};

    SUBCASE("gamma zero reduces to mean ce") {
        LossConfig cfg{0.0, 4.5};
        ClientLogitTable table;
        table.rows.resize(3);
        const double expected = (ce_loss(batch[0], 0) + ce_loss(batch[1], 1)) / 2.0;
        CHECK(total_objective(batch, labels, &table, cfg) == doctest::Approx(expected));
        CHECK(total_objective(batch, labels, nullptr, cfg) == doctest::Approx(expected));
    }

    SUBCASE("table equal to the local logits zeroes the kd term") {
        LossConfig cfg{1.0, 4.5};
        ClientLogitTable table;
        table.rows.resize(3);
        table.rows[0] = {batch[0], true};
        table.rows[1] = {batch[1], true};
        const double expected = (ce_loss(batch[0], 0) + ce_loss(batch[1], 1)) / 2.0;
        CHECK(total_objective(batch, labels, &table, cfg) ==
              doctest::Approx(expected).epsilon(1e-15));
    }

    SUBCASE("absent classes fall back to the local logit") {
        LossConfig cfg{1.0, 4.5};
        ClientLogitTable table;
        table.rows.resize(3);  // nothing present
        const double expected = (ce_loss(batch[0], 0) + ce_loss(batch[1], 1)) / 2.0;
        CHECK(total_objective(batch, labels, &table, cfg) ==
              doctest::Approx(expected).epsilon(1e-15));
    }

    SUBCASE("hand-summed two-sample case") {
        LossConfig cfg{1.0, 4.5};
        ClientLogitTable table;
        table.rows.resize(3);
        table.rows[0] = {{0.9, 0.0, -0.4}, true};
        table.rows[1] = {{-0.2, 1.1, 0.3}, true};
        const double expected = (ce_loss(batch[0], 0) + ce_loss(batch[1], 1) +
                                 kd_loss(table.rows[0].logits, batch[0], 4.5) +
                                 kd_loss(table.rows[1].logits, batch[1], 4.5)) /
                                2.0;
        CHECK(total_objective(batch, labels, &table, cfg) ==
              doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("objective gradient flows into local logits only") {
    ClientLogitTable table;
    table.rows.resize(3);
    table.rows[0] = {{0.9, 0.0, -0.4}, true};
    table.rows[2] = {{-0.3, 0.2, 1.0}, true};
    LossConfig cfg{1.0, 4.5};

    SUBCASE("finite differences on the local side") {
        const auto f = [&](adx::Tape& tape, const adx::Tensor& x) {
            const auto first = adx::slice(tape, x, 0, 0, 3);
            const auto second = adx::slice(tape, x, 0, 3, 3);
            return total_objective_node(tape, {first, second}, {0, 2}, &table, cfg);
        };
        const auto x = adx::Tensor::leaf({6}, {1.2, -0.3, 0.4, -0.5, 0.9, 0.1});
        CHECK(adx::finite_diff_check(f, x, 1e-5) < 1e-5);
    }

    SUBCASE("detached global target receives exactly zero gradient") {
        adx::Tape tape;
        const auto global = adx::Tensor::leaf({3}, {0.9, 0.0, -0.4}, true);
        const auto local = adx::Tensor::leaf({3}, {1.2, -0.3, 0.4}, true);
        const auto kd = kd_loss_node(tape, global, local, 4.5);
        tape.backward(kd);
        CHECK_FALSE(global.has_grad());
        for (double g : global.grad()) CHECK(g == 0.0);
        CHECK(local.has_grad());
        double norm = 0.0;
        for (double g : local.grad()) norm += std::abs(g);
        CHECK(norm > 0.0);
    }

    SUBCASE("tensor objective value matches the scalar path") {
        adx::Tape tape;
        const auto first = adx::Tensor::leaf({3}, {1.2, -0.3, 0.4});
        const auto second = adx::Tensor::leaf({3}, {-0.5, 0.9, 0.1});
        const auto node = total_objective_node(tape, {first, second}, {0, 2}, &table, cfg);
        const double scalar =
            total_objective({first.values(), second.values()}, {0, 2}, &table, cfg);
        CHECK(node.item() == doctest::Approx(scalar).epsilon(1e-14));
    }
}
