#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gah/diffcore.hpp"
#include "gah/random.hpp"

namespace {

using gah::Array;
using gah::Parameter;
using gah::Shape;

std::vector<double> random_values(gah::Rng& rng, std::size_t n, double scale = 1.0)
{
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-scale, scale);
    }
    return v;
}

Parameter random_param(gah::Rng& rng, const std::string& name, Shape shape, double scale = 1.0)
{
    const std::size_t n = gah::numel(shape);
    return Parameter(name, std::move(shape), random_values(rng, n, scale));
}

Shape random_shape(gah::Rng& rng, std::size_t rank)
{
    Shape s(rank);
    for (auto& d : s) {
        d = 1 + rng.below(3);
    }
    return s;
}

// Fixed random projection so every grad check reduces to a scalar with non-trivial upstream gradient.
Array project(const Array& y, std::uint64_t seed)
{
    gah::Rng rng(seed);
    Array w(y.shape(), random_values(rng, y.size()));
    return gah::sum_all(gah::mul(y, w));
}

TEST(Matmul, IdentityCase)
{
    Array eye({2, 2}, {1, 0, 0, 1});
    Array m({2, 2}, {1, 2, 3, 4});
    const Array out = gah::matmul(eye, m);
    EXPECT_EQ(out.to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, AnnihilatingProduct)
{
    Array a({2, 2}, {1, 0, 0, 0});
    Array b({2, 2}, {0, 0, 0, 1});
    EXPECT_EQ(gah::matmul(a, b).to_vector(), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Matmul, MatchesTripleLoopOracle)
{
    gah::Rng rng(11);
    Array a({3, 4}, random_values(rng, 12));
    Array b({4, 2}, random_values(rng, 8));
    const Array c = gah::matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{3, 2}));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < 4; ++p) {
                s += a.at(i * 4 + p) * b.at(p * 2 + j);
            }
            EXPECT_DOUBLE_EQ(c.at(i * 2 + j), s);
        }
    }
}

TEST(Matmul, BroadcastsBatchDimensions)
{
    gah::Rng rng(12);
    Array a({2, 3, 2, 4}, random_values(rng, 48));
    Array b({3, 4, 5}, random_values(rng, 60));
    const Array c = gah::matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 3, 2, 5}));
    for (std::size_t x = 0; x < 2; ++x) {
        for (std::size_t y = 0; y < 3; ++y) {
            for (std::size_t i = 0; i < 2; ++i) {
                for (std::size_t j = 0; j < 5; ++j) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < 4; ++p) {
                        s += a.at(((x * 3 + y) * 2 + i) * 4 + p) * b.at((y * 4 + p) * 5 + j);
                    }
                    EXPECT_NEAR(c.at(((x * 3 + y) * 2 + i) * 5 + j), s, 1e-14);
                }
            }
        }
    }
}

TEST(Matmul, ShapeMismatchNamesBothShapes)
{
    Array a = Array::zeros({2, 3});
    Array b = Array::zeros({2, 3});
    try {
        (void)gah::matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const gah::ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
        EXPECT_NE(msg.find(" x "), std::string::npos);
    }
}

TEST(Softmax, SymmetricInput)
{
    const Array y = gah::softmax(Array({2}, {0, 0}), 0);
    EXPECT_DOUBLE_EQ(y.at(0), 0.5);
    EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, StabilizedAgainstOverflow)
{
    const Array y = gah::softmax(Array({3}, {1000, 1000, 1000}), 0);
    for (double v : y.data()) {
        EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    }
}

TEST(Softmax, MatchesExtendedPrecisionFormula)
{
    const Array y = gah::softmax(Array({3}, {1, 2, 3}), -1);
    long double total = 0.0L;
    for (int i = 1; i <= 3; ++i) {
        total += std::exp(static_cast<long double>(i));
    }
    for (int i = 1; i <= 3; ++i) {
        const long double expected = std::exp(static_cast<long double>(i)) / total;
        EXPECT_NEAR(y.at(i - 1), static_cast<double>(expected), 1e-15);
    }
}

TEST(Softmax, SlicesSumToOneAlongAnyAxis)
{
    gah::Rng rng(5);
    Array x({3, 4, 5}, random_values(rng, 60, 1e3));
    for (int axis = 0; axis < 3; ++axis) {
        const Array y = gah::softmax(x, axis);
        const Array s = gah::sum(y, axis);
        for (double v : s.data()) {
            EXPECT_NEAR(v, 1.0, 1e-12);
        }
        for (double v : y.data()) {
            EXPECT_GE(v, 0.0);
        }
    }
}

TEST(Softmax, InvalidAxisThrows)
{
    EXPECT_THROW((void)gah::softmax(Array::zeros({2, 2}), 2), gah::ShapeError);
    EXPECT_THROW((void)gah::softmax(Array::zeros({2, 2}), -3), gah::ShapeError);
}

TEST(LayerNorm, ConstantVectorMapsToZero)
{
    Parameter gain("g", {4}, {1, 1, 1, 1});
    Parameter bias("b", {4}, {0, 0, 0, 0});
    const Array y = gah::layer_norm(Array({4}, {3, 3, 3, 3}), 0, gain, bias);
    for (double v : y.data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(LayerNorm, TwoPointVector)
{
    Parameter gain("g", {2}, {1, 1});
    Parameter bias("b", {2}, {0, 0});
    const Array y = gah::layer_norm(Array({2}, {1, 3}), 0, gain, bias);
    // population variance 1, so y = (x - 2) / sqrt(1 + eps)
    const double s = 1.0 / std::sqrt(1.0 + gah::kLayerNormEps);
    EXPECT_NEAR(y.at(0), -s, 1e-15);
    EXPECT_NEAR(y.at(1), s, 1e-15);
    EXPECT_NEAR(y.at(0), -1.0, 1e-5);
}

TEST(LayerNorm, AffineGainAndBias)
{
    Parameter gain("g", {2}, {2, 2});
    Parameter bias("b", {2}, {1, 1});
    const Array y = gah::layer_norm(Array({2}, {1, 3}), 0, gain, bias);
    const double s = 1.0 / std::sqrt(1.0 + gah::kLayerNormEps);
    EXPECT_NEAR(y.at(0), 1.0 - 2.0 * s, 1e-15);
    EXPECT_NEAR(y.at(1), 1.0 + 2.0 * s, 1e-15);
    EXPECT_NEAR(y.at(0), -1.0, 1e-4);
    EXPECT_NEAR(y.at(1), 3.0, 1e-4);
}

TEST(LayerNorm, SlicesAreStandardizedUpToEpsilon)
{
    gah::Rng rng(8);
    Array x({5, 6}, random_values(rng, 30, 3.0));
    Parameter gain("g", {6}, std::vector<double>(6, 1.0));
    Parameter bias("b", {6}, std::vector<double>(6, 0.0));
    const Array y = gah::layer_norm(x, 1, gain, bias);
    for (std::size_t r = 0; r < 5; ++r) {
        double mu = 0.0;
        double var_in = 0.0;
        for (std::size_t c = 0; c < 6; ++c) {
            mu += x.at(r * 6 + c) / 6.0;
        }
        for (std::size_t c = 0; c < 6; ++c) {
            var_in += (x.at(r * 6 + c) - mu) * (x.at(r * 6 + c) - mu) / 6.0;
        }
        double m = 0.0;
        double v = 0.0;
        for (std::size_t c = 0; c < 6; ++c) {
            m += y.at(r * 6 + c) / 6.0;
        }
        for (std::size_t c = 0; c < 6; ++c) {
            v += (y.at(r * 6 + c) - m) * (y.at(r * 6 + c) - m) / 6.0;
        }
        EXPECT_NEAR(m, 0.0, 1e-10);
        // The epsilon inside the square root shrinks the variance to var / (var + eps).
        EXPECT_NEAR(v, var_in / (var_in + gah::kLayerNormEps), 1e-10);
    }
}

TEST(LayerNorm, RejectsMismatchedGain)
{
    Parameter gain("g", {3}, {1, 1, 1});
    Parameter bias("b", {2}, {0, 0});
    EXPECT_THROW((void)gah::layer_norm(Array::zeros({2}), 0, gain, bias), gah::ShapeError);
}

TEST(GradCheck, SquareFunction)
{
    Parameter x("x", {1}, {3.0});
    std::vector<Parameter> params{x};
    const double err = gah::grad_check([&] { return gah::square(x.value()); }, params, 1e-5);
    EXPECT_LT(err, 1e-8);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    EXPECT_DOUBLE_EQ(x.mutable_data()[0], 3.0);
}

TEST(GradCheck, ConstantFunctionHasZeroGradient)
{
    Parameter x("x", {3}, {0.3, -1.2, 2.0});
    std::vector<Parameter> params{x};
    const double err = gah::grad_check([&] { return gah::sum_all(gah::softmax(x.value(), 0)); }, params, 1e-5);
    EXPECT_LT(err, 1e-8);
    for (double g : x.grad()) {
        EXPECT_NEAR(g, 0.0, 1e-15);
    }
}

TEST(GradCheck, RejectsNonScalarAndBadEps)
{
    Parameter x("x", {2}, {1.0, 2.0});
    std::vector<Parameter> params{x};
    EXPECT_THROW((void)gah::grad_check([&] { return x.value(); }, params, 1e-5), gah::ShapeError);
    EXPECT_THROW((void)gah::grad_check([&] { return gah::sum_all(x.value()); }, params, 0.0), std::invalid_argument);
    EXPECT_THROW((void)gah::grad_check([&] { return gah::sum_all(x.value()); }, params, 0.1), std::invalid_argument);
}

// Every differentiable primitive against central differences on randomized shapes up to rank 4.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, UnaryAndBinaryOps)
{
    gah::Rng rng(100 + static_cast<std::uint64_t>(GetParam()));
    const std::size_t rank = 1 + static_cast<std::size_t>(GetParam()) % 4;
    const Shape shape = random_shape(rng, rank);
    Parameter a = random_param(rng, "a", shape);
    Parameter b = random_param(rng, "b", shape);
    Parameter pos("pos", shape, [&] {
        auto v = random_values(rng, gah::numel(shape));
        for (double& x : v) {
            x = 0.5 + std::fabs(x);
        }
        return v;
    }());
    Shape tail(shape.end() - 1, shape.end());
    Parameter bias = random_param(rng, "bias", tail);
    std::vector<Parameter> params{a, b, pos, bias};

    const std::vector<std::pair<std::string, std::function<Array()>>> cases = {
        {"add", [&] { return gah::add(a.value(), b.value()); }},
        {"sub", [&] { return gah::sub(a.value(), b.value()); }},
        {"mul", [&] { return gah::mul(a.value(), b.value()); }},
        {"div", [&] { return gah::div(a.value(), pos.value()); }},
        {"broadcast_add", [&] { return gah::add(a.value(), bias.value()); }},
        {"broadcast_mul", [&] { return gah::mul(bias.value(), b.value()); }},
        {"scalar", [&] { return gah::add_scalar(gah::scale(a.value(), 1.7), 0.3); }},
        {"exp", [&] { return gah::exp(a.value()); }},
        {"log", [&] { return gah::log(pos.value()); }},
        {"sqrt", [&] { return gah::sqrt(pos.value()); }},
        {"tanh", [&] { return gah::tanh(a.value()); }},
        {"relu", [&] { return gah::relu(a.value()); }},
        {"abs", [&] { return gah::abs(a.value()); }},
        {"square", [&] { return gah::square(a.value()); }},
        {"neg", [&] { return gah::neg(a.value()); }},
    };
    for (const auto& [name, op] : cases) {
        const double err = gah::grad_check([&] { return project(op(), 7); }, params, 1e-5);
        EXPECT_LT(err, 1e-4) << name << " on shape " << gah::to_string(shape);
    }
}

TEST_P(OpGradients, StructuralOps)
{
    gah::Rng rng(200 + static_cast<std::uint64_t>(GetParam()));
    const std::size_t rank = 1 + static_cast<std::size_t>(GetParam()) % 4;
    const Shape shape = random_shape(rng, rank);
    Parameter a = random_param(rng, "a", shape);
    Parameter b = random_param(rng, "b", shape);
    std::vector<Parameter> params{a, b};
    const int axis = static_cast<int>(rng.below(rank));

    std::vector<std::size_t> perm(rank);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);

    const std::vector<std::pair<std::string, std::function<Array()>>> cases = {
        {"sum", [&] { return gah::sum(a.value(), axis); }},
        {"sum_keep", [&] { return gah::sum(a.value(), axis, true); }},
        {"mean", [&] { return gah::mean(a.value(), axis); }},
        {"sum_all", [&] { return gah::sum_all(a.value()); }},
        {"mean_all", [&] { return gah::mean_all(a.value()); }},
        {"permute", [&] { return gah::permute(a.value(), perm); }},
        {"reshape", [&] { return gah::reshape(a.value(), {a.size()}); }},
        {"concat", [&] { return gah::concat({a.value(), b.value()}, axis); }},
        {"slice", [&] { return gah::slice(a.value(), axis, 0, a.value().dim(axis)); }},
        {"softmax", [&] { return gah::softmax(a.value(), axis); }},
        {"log_softmax", [&] { return gah::log_softmax(a.value(), axis); }},
    };
    for (const auto& [name, op] : cases) {
        const double err = gah::grad_check([&] { return project(op(), 9); }, params, 1e-5);
        EXPECT_LT(err, 1e-4) << name << " on shape " << gah::to_string(shape) << " axis " << axis;
    }
    if (rank >= 2) {
        const double err = gah::grad_check([&] { return project(gah::transpose(a.value()), 3); }, params, 1e-5);
        EXPECT_LT(err, 1e-4) << "transpose";
    }
}

TEST_P(OpGradients, MatmulAndLayerNorm)
{
    gah::Rng rng(300 + static_cast<std::uint64_t>(GetParam()));
    const std::size_t batch_rank = static_cast<std::size_t>(GetParam()) % 3;
    Shape batch = random_shape(rng, batch_rank);
    Shape sa = batch;
    sa.push_back(1 + rng.below(3));
    sa.push_back(1 + rng.below(3));
    Shape sb = batch;
    sb.push_back(sa.back());
    sb.push_back(1 + rng.below(3));
    Parameter a = random_param(rng, "a", sa);
    Parameter b = random_param(rng, "b", sb);
    Parameter w = random_param(rng, "w", {sa.back(), 2});
    std::vector<Parameter> params{a, b, w};
    EXPECT_LT(gah::grad_check([&] { return project(gah::matmul(a.value(), b.value()), 1); }, params), 1e-4);
    EXPECT_LT(gah::grad_check([&] { return project(gah::matmul(a.value(), w.value()), 2); }, params), 1e-4);

    const Shape sx = random_shape(rng, 1 + static_cast<std::size_t>(GetParam()) % 4);
    Parameter x = random_param(rng, "x", sx, 2.0);
    const int axis = static_cast<int>(rng.below(sx.size()));
    const std::size_t len = sx[static_cast<std::size_t>(axis)];
    Parameter gain = random_param(rng, "gain", {len});
    Parameter bias = random_param(rng, "bias", {len});
    std::vector<Parameter> ln_params{x, gain, bias};
    if (len > 1) {
        EXPECT_LT(gah::grad_check([&] { return project(gah::layer_norm(x.value(), axis, gain, bias), 4); }, ln_params),
                  1e-4);
    }
}

INSTANTIATE_TEST_SUITE_P(Randomized, OpGradients, ::testing::Range(0, 12));

TEST(Determinism, ForwardIsBitwiseReproducible)
{
    gah::Rng rng(1);
    Array x({4, 5}, random_values(rng, 20));
    Array w({5, 3}, random_values(rng, 15));
    const auto run = [&] { return gah::softmax(gah::tanh(gah::matmul(x, w)), 1).to_vector(); };
    EXPECT_EQ(run(), run());
}

TEST(Tape, GradientsAccumulateIntoLeavesAcrossUses)
{
    Parameter x("x", {2}, {1.0, -2.0});
    // y = sum(x * x) + sum(x) -> dy/dx = 2x + 1
    const Array y = gah::add(gah::sum_all(gah::mul(x.value(), x.value())), gah::sum_all(x.value()));
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
}

TEST(Array, RejectsInconsistentShape)
{
    EXPECT_THROW(Array({2, 2}, {1, 2, 3}), gah::ShapeError);
    EXPECT_THROW(Array({0}, {}), gah::ShapeError);
}

} // namespace
