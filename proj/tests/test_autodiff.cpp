// Engine-level tests: forward semantics of every primitive, reverse-mode
// gradients against central finite differences (64-bit), purity, the sum
// rule, non-finite detection, and scheduling independence.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "thama/executor.hpp"
#include "thama/gradcheck.hpp"
#include "thama/graph.hpp"
#include "thama/model.hpp"

using namespace thama;
using ad::Executor;
using ad::Graph;
using ad::Mode;

namespace {

Tensor64 t64(Shape shape, std::vector<double> v) {
    return Tensor64(std::move(shape), std::move(v));
}

// Magnitudes bounded away from zero keep ReLU/pool kinks far from the
// finite-difference step.
Tensor64 random_t64(Shape shape, Rng& rng, double lo = 0.3, double hi = 1.2) {
    Tensor64 t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double mag = rng.uniform(lo, hi);
        t[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

} // namespace

TEST_CASE("forward: elementwise add") {
    Graph g;
    const int x = g.input("x", {2});
    const int y = g.input("y", {2});
    const int s = g.add(x, y);
    Executor<double> ex(g);
    ex.bind("x", t64({1, 2}, {1, 2}));
    ex.bind("y", t64({1, 2}, {3, 4}));
    ex.forward({s});
    CHECK(ex.value(s)[0] == 4.0);
    CHECK(ex.value(s)[1] == 6.0);
}

TEST_CASE("forward: matmul with identity matrix is identity") {
    Graph g;
    const int v = g.input("v", {2});
    const int w = g.param("w", {2, 2});
    const int y = g.matmul(v, w);
    Executor<double> ex(g);
    ex.set_param("w", t64({2, 2}, {1, 0, 0, 1}));
    ex.bind("v", t64({1, 2}, {5, 7}));
    ex.forward({y});
    CHECK(ex.value(y)[0] == 5.0);
    CHECK(ex.value(y)[1] == 7.0);
}

TEST_CASE("forward: relu(W x) against hand arithmetic") {
    // W = [[1,-1],[2,0]], x = [3,1]: W x = [2,6], relu = [2,6]
    Graph g;
    const int x = g.input("x", {2});
    const int w = g.param("w", {2, 2});
    const int y = g.relu(g.matmul(x, w, /*transpose_w=*/true));
    Executor<double> ex(g);
    ex.set_param("w", t64({2, 2}, {1, -1, 2, 0}));
    ex.bind("x", t64({1, 2}, {3, 1}));
    ex.forward({y});
    CHECK(ex.value(y)[0] == doctest::Approx(2.0));
    CHECK(ex.value(y)[1] == doctest::Approx(6.0));
}

TEST_CASE("backward: d(x^2)/dx = 2x") {
    Graph g;
    const int x = g.param("x", {1});
    const int loss = g.reduce_mean(g.mul(x, x));
    Executor<double> ex(g);
    ex.set_param("x", Tensor64::scalar(3.0));
    ex.forward({loss});
    const auto grads = ex.backward(loss);
    CHECK(grads.at("x")[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: sigmoid gradient at 0 is 0.25") {
    Graph g;
    const int x = g.param("x", {1});
    const int loss = g.reduce_mean(g.sigmoid(x));
    Executor<double> ex(g);
    ex.set_param("x", Tensor64::scalar(0.0));
    ex.forward({loss});
    const auto grads = ex.backward(loss);
    CHECK(grads.at("x")[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("grad_check: purely linear graph is exactly differenced") {
    Graph g;
    const int x = g.input("x", {3});
    const int w = g.param("w", {3, 2});
    const int b = g.param("b", {2});
    const int loss = g.reduce_mean(g.add(g.matmul(x, w), b));
    Executor<double> ex(g);
    Rng rng(7);
    ex.set_param("w", random_t64({3, 2}, rng));
    ex.set_param("b", random_t64({2}, rng));
    ex.bind("x", random_t64({2, 3}, rng));
    const double err = ad::grad_check(ex, loss, {.epsilon = 1e-5, .seed = 1});
    CHECK(err < 1e-9);
}

TEST_CASE("grad_check: small randomly initialized fusion model graph") {
    models::ModelSpec spec;
    spec.kind = models::ModelKind::Thama;
    spec.d1 = 16;
    spec.d2 = 16;
    spec.d_f = 4;
    spec.dropout = 0.3f;
    spec.seed = 11;
    auto model = models::build_model_f64(spec);
    Rng rng(3);
    model.exec->bind("x1", random_t64({2, 16}, rng, 0.1, 1.0));
    model.exec->bind("x2", random_t64({2, 16}, rng, 0.1, 1.0));
    model.exec->bind("y", t64({2, 1}, {1.0, 0.0}));
    const double err =
        ad::grad_check(*model.exec, model.io.loss, {.epsilon = 1e-5, .seed = 5});
    CHECK(err < 1e-5);
}

TEST_CASE("grad_check: an injected gradient fault is reported") {
    models::ModelSpec spec;
    spec.kind = models::ModelKind::Fcn;
    spec.d1 = 6;
    spec.dropout = 0.0f;
    spec.seed = 2;
    auto model = models::build_model_f64(spec);
    Rng rng(4);
    model.exec->bind("x1", random_t64({3, 6}, rng));
    model.exec->bind("y", t64({3, 1}, {1.0, 0.0, 1.0}));
    model.exec->forward({model.io.loss}, Mode::Train, &rng);
    auto grads = model.exec->backward(model.io.loss);
    auto mirror = model.exec->cast_to<long double>();
    mirror.forward({model.io.loss}, Mode::Replay);
    // sanity: the honest gradients pass
    CHECK(ad::max_relative_error(mirror, model.io.loss, grads, {.seed = 9}) < 1e-6);
    // scale one tensor by 1.1 and the comparison must flag it
    for (std::size_t i = 0; i < grads.at("fcn.out.w").numel(); ++i)
        grads.at("fcn.out.w")[i] *= 1.1;
    const double err = ad::max_relative_error(mirror, model.io.loss, grads, {.seed = 9});
    CHECK(err > 1e-2);
}

TEST_CASE("grad_check: epsilon must be positive") {
    Graph g;
    const int x = g.param("x", {1});
    const int loss = g.reduce_mean(g.mul(x, x));
    Executor<double> ex(g);
    ex.set_param("x", Tensor64::scalar(1.0));
    ex.forward({loss});
    CHECK_THROWS_AS((void)ad::grad_check(ex, loss, {.epsilon = 0.0}), ConfigError);
    CHECK_THROWS_AS((void)ad::grad_check(ex, loss, {.epsilon = -1e-5}), ConfigError);
}

// Every primitive against central differences on random small shapes.
TEST_CASE("grad_check: every primitive over random small-shape instances") {
    constexpr int kTrials = 100;
    const ad::GradCheckOptions opt{.epsilon = 1e-6, .seed = 77};
    Rng rng(1234);
    auto dim = [&rng](std::size_t lo, std::size_t hi) {
        return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
    };

    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t batch = dim(1, 3);
        {
            // add + mul with unbatched (bias-style) broadcast operands
            Graph g;
            const std::size_t n = dim(1, 5);
            const int x = g.input("x", {n});
            const int a = g.param("a", {n});
            const int b = g.param("b", {n});
            const int loss = g.reduce_mean(g.mul(g.add(x, a), b));
            Executor<double> ex(g);
            ex.set_param("a", random_t64({n}, rng));
            ex.set_param("b", random_t64({n}, rng));
            ex.bind("x", random_t64({batch, n}, rng));
            CHECK(ad::grad_check(ex, loss, opt) < 1e-5);
        }
        {
            // matmul, both orientations chained
            Graph g;
            const std::size_t n = dim(1, 4), m = dim(1, 4), q = dim(1, 4);
            const int x = g.input("x", {n});
            const int w = g.param("w", {n, m});
            const int wt = g.param("wt", {q, m});
            const int y1 = g.matmul(x, w);
            const int loss = g.reduce_mean(g.matmul(y1, wt, /*transpose_w=*/true));
            Executor<double> ex(g);
            ex.set_param("w", random_t64({n, m}, rng));
            ex.set_param("wt", random_t64({q, m}, rng));
            ex.bind("x", random_t64({batch, n}, rng));
            CHECK(ad::grad_check(ex, loss, opt) < 1e-5);
        }
        {
            // bilinear core contraction
            Graph g;
            const std::size_t r1 = dim(1, 4), r2 = dim(1, 4), r3 = dim(1, 4);
            const int f1 = g.input("f1", {r1});
            const int f2 = g.input("f2", {r2});
            const int core = g.param("core", {r1, r2, r3});
            const int loss = g.reduce_mean(g.bilinear(f1, f2, core));
            Executor<double> ex(g);
            ex.set_param("core", random_t64({r1, r2, r3}, rng));
            ex.bind("f1", random_t64({batch, r1}, rng));
            ex.bind("f2", random_t64({batch, r2}, rng));
            CHECK(ad::grad_check(ex, loss, opt) < 1e-5);
        }
        {
            // conv1d + relu + maxpool + reshape + concat + sigmoid + dropout
            Graph g;
            const std::size_t ci = dim(1, 3), co = dim(1, 3), len = dim(2, 6);
            const int x = g.input("x", {ci, len});
            const int k = g.param("k", {co, ci, 3});
            const int bias = g.param("bias", {co});
            const int conv = g.maxpool1d(g.relu(g.conv1d(x, k, bias)), 2);
            const int flat = g.reshape(conv, {co * (len / 2)});
            const int both = g.concat(flat, g.sigmoid(flat));
            const int dropped = g.dropout(both, 0.25f);
            const int loss = g.reduce_mean(dropped);
            Executor<double> ex(g);
            ex.set_param("k", random_t64({co, ci, 3}, rng));
            ex.set_param("bias", random_t64({co}, rng));
            ex.bind("x", random_t64({batch, ci, len}, rng));
            CHECK(ad::grad_check(ex, loss, opt) < 1e-5);
        }
        {
            // logit-level bce loss
            Graph g;
            const std::size_t n = dim(1, 5);
            const int x = g.input("x", {n});
            const int w = g.param("w", {n, 1});
            const int b = g.param("b", {1});
            const int logit = g.add(g.matmul(x, w), b);
            const int y = g.input("y", {1});
            const int loss = g.bce_logits(logit, y);
            Executor<double> ex(g);
            ex.set_param("w", random_t64({n, 1}, rng));
            ex.set_param("b", random_t64({1}, rng));
            ex.bind("x", random_t64({batch, n}, rng));
            Tensor64 labels({batch, 1});
            for (std::size_t i = 0; i < batch; ++i)
                labels[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            ex.bind("y", labels);
            CHECK(ad::grad_check(ex, loss, opt) < 1e-5);
        }
    }
}

TEST_CASE("forward purity: identical bindings give bitwise-identical outputs") {
    models::ModelSpec spec;
    spec.kind = models::ModelKind::Cnn;
    spec.d1 = 16;
    spec.seed = 5;
    auto model = models::build_model(spec);
    Rng rng(6);
    Tensor x({4, 16});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
    const std::vector<float> p1 = models::predict_batch(model, x);
    const std::vector<float> p2 = models::predict_batch(model, x);
    CHECK(p1 == p2);
}

TEST_CASE("sum rule: grad(f+g) equals grad(f) + grad(g)") {
    Graph g;
    const int w = g.param("w", {4});
    const int f = g.reduce_mean(g.mul(w, w));
    const int h = g.reduce_mean(g.sigmoid(w));
    const int sum = g.add(f, h);
    Executor<double> ex(g);
    Rng rng(8);
    ex.set_param("w", random_t64({4}, rng));
    ex.forward({sum});
    const auto gsum = ex.backward(sum);
    const auto gf = ex.backward(f);
    const auto gh = ex.backward(h);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::fabs(gsum.at("w")[i] - (gf.at("w")[i] + gh.at("w")[i])) < 1e-10);
}

TEST_CASE("non-finite intermediate aborts and names the node") {
    Graph g;
    const int x = g.param("x", {1});
    const int m = g.mul(x, x);
    g.set_label(m, "square");
    const int loss = g.reduce_mean(m);
    Executor<double> ex(g);
    ex.set_param("x", Tensor64::scalar(1e200));
    try {
        ex.forward({loss});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("square") != std::string::npos);
        CHECK(msg.find("mul") != std::string::npos);
    }
}

TEST_CASE("non-finite binding is rejected at the input node") {
    Graph g;
    const int x = g.input("x", {2});
    const int loss = g.reduce_mean(x);
    Executor<double> ex(g);
    ex.bind("x", t64({1, 2}, {1.0, std::nan("")}));
    CHECK_THROWS_AS(ex.forward({loss}), NumericError);
}

TEST_CASE("unbound leaves and shape mismatches are errors") {
    Graph g;
    const int x = g.input("x", {2});
    const int y = g.input("y", {3});
    CHECK_THROWS_AS((void)g.add(x, y), ShapeError);
    const int w = g.param("w", {4, 2});
    CHECK_THROWS_AS((void)g.matmul(x, w), ShapeError);

    const int loss = g.reduce_mean(x);
    Executor<double> ex(g);
    CHECK_THROWS_AS(ex.forward({loss}), ShapeError); // nothing bound
    CHECK_THROWS_AS(ex.bind("x", t64({1, 3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("backward requires a prior forward and a scalar loss") {
    Graph g;
    const int x = g.input("x", {2});
    const int loss = g.reduce_mean(x);
    Executor<double> ex(g);
    CHECK_THROWS_AS((void)ex.backward(loss), Error);
    ex.bind("x", t64({2, 2}, {1, 2, 3, 4}));
    ex.forward({loss});
    CHECK_THROWS_AS((void)ex.backward(x), ShapeError); // batched, not a scalar loss
}

TEST_CASE("gradient map keys are exactly the parameters reachable from the loss") {
    Graph g;
    const int x = g.input("x", {2});
    const int w = g.param("w_used", {2, 2});
    const int unused = g.param("w_unused", {2, 2});
    (void)unused;
    const int loss = g.reduce_mean(g.matmul(x, w));
    Executor<double> ex(g);
    Rng rng(10);
    ex.set_param("w_used", random_t64({2, 2}, rng));
    ex.set_param("w_unused", random_t64({2, 2}, rng));
    ex.bind("x", random_t64({1, 2}, rng));
    ex.forward({loss});
    const auto grads = ex.backward(loss);
    CHECK(grads.size() == 1);
    CHECK(grads.count("w_used") == 1);
}

TEST_CASE("concurrent evaluation over disjoint batches matches sequential") {
    models::ModelSpec spec;
    spec.kind = models::ModelKind::Fcn;
    spec.d1 = 12;
    spec.seed = 21;
    auto model = models::build_model(spec);
    Rng rng(22);
    Tensor a({8, 12}), b({8, 12});
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.normal());
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal());

    const std::vector<float> seq_a = models::predict_batch(model, a);
    const std::vector<float> seq_b = models::predict_batch(model, b);

    auto ma = model.clone();
    auto mb = model.clone();
    std::vector<float> par_a, par_b;
    std::thread ta([&] { par_a = models::predict_batch(ma, a); });
    std::thread tb([&] { par_b = models::predict_batch(mb, b); });
    ta.join();
    tb.join();
    CHECK(par_a == seq_a);
    CHECK(par_b == seq_b);
}
