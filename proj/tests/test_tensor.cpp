#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tse/gradcheck.hpp"
#include "tse/layers.hpp"
#include "tse/tensor.hpp"

using tse::Rng;
using tse::Shape;
using tse::Tape;
using DTensor = tse::Tensor<double>;

namespace {

DTensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return DTensor::uniform(rng, std::move(shape), lo, hi);
}

}  // namespace

TEST_CASE("conv1d frame count and basic values") {
  Rng rng(1);
  DTensor x = random_tensor(rng, {160});
  DTensor f = random_tensor(rng, {4, 16});
  auto out = tse::conv1d(x, f, 8);
  CHECK(out.shape() == Shape{19, 4});

  DTensor zeros(Shape{64});
  auto zout = tse::conv1d(zeros, f, 8);
  for (double v : zout.values()) CHECK(v == 0.0);

  // x = [1,2,3,4], filter [1,1], hop 2 -> [3, 7]
  DTensor x2 = DTensor::from({4}, {1, 2, 3, 4});
  DTensor f2 = DTensor::from({1, 2}, {1, 1});
  auto small = tse::conv1d(x2, f2, 2);
  CHECK(small.shape() == Shape{2, 1});
  CHECK(small.at(0, 0) == doctest::Approx(3.0));
  CHECK(small.at(1, 0) == doctest::Approx(7.0));

  CHECK_THROWS_AS(tse::conv1d(DTensor(Shape{8}), f, 8), tse::DimensionError);
}

TEST_CASE("conv1d_transpose length and hand case") {
  Rng rng(2);
  DTensor frames = random_tensor(rng, {19, 4});
  DTensor f = random_tensor(rng, {4, 16});
  auto y = tse::conv1d_transpose(frames, f, 8);
  CHECK(y.shape() == Shape{(19 - 1) * 8 + 16});

  DTensor zf(Shape{19, 4});
  auto silent = tse::conv1d_transpose(zf, f, 8);
  for (double v : silent.values()) CHECK(v == 0.0);

  // single frame [[2]], filter [1,3] -> [2, 6]
  DTensor one = DTensor::from({1, 1}, {2});
  DTensor fil = DTensor::from({1, 2}, {1, 3});
  auto wave = tse::conv1d_transpose(one, fil, 4);
  CHECK(wave.shape() == Shape{2});
  CHECK(wave.at(0) == doctest::Approx(2.0));
  CHECK(wave.at(1) == doctest::Approx(6.0));
}

TEST_CASE("encode/decode length bookkeeping over random configs") {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int f_len = 2 + rng.uniform_int(30);
    const int hop = 1 + rng.uniform_int(f_len);
    const int t_len = f_len + rng.uniform_int(400);
    DTensor x = random_tensor(rng, {t_len});
    DTensor f = random_tensor(rng, {3, f_len});
    auto frames = tse::conv1d(x, f, hop);
    const int k = frames.dim(0);
    CHECK(k == (t_len - f_len) / hop + 1);
    auto y = tse::conv1d_transpose(frames, f, hop);
    CHECK(y.dim(0) == (k - 1) * hop + f_len);
  }
}

TEST_CASE("attention_block properties") {
  Rng rng(4);

  SUBCASE("single position returns v") {
    DTensor q = random_tensor(rng, {1, 8});
    DTensor k = random_tensor(rng, {1, 8});
    DTensor v = random_tensor(rng, {1, 8});
    auto out = tse::attention_block(q, k, v);
    for (int i = 0; i < 8; ++i) CHECK(out.at(0, i) == doctest::Approx(v.at(0, i)));
  }

  SUBCASE("uniform scores give causal prefix means") {
    DTensor q(Shape{3, 4});  // all zeros -> uniform over prefix
    DTensor k = random_tensor(rng, {3, 4});
    DTensor v = random_tensor(rng, {3, 4});
    auto out = tse::attention_block(q, k, v);
    for (int c = 0; c < 4; ++c) {
      CHECK(out.at(0, c) == doctest::Approx(v.at(0, c)));
      CHECK(out.at(1, c) == doctest::Approx(0.5 * (v.at(0, c) + v.at(1, c))));
      CHECK(out.at(2, c) ==
            doctest::Approx((v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0));
    }
  }

  SUBCASE("softmax rows sum to one over the causal prefix") {
    DTensor s = random_tensor(rng, {5, 5});
    auto w = tse::causal_row_softmax(s);
    for (int i = 0; i < 5; ++i) {
      double row = 0.0;
      for (int j = 0; j < 5; ++j) {
        row += w.at(i, j);
        if (j > i) CHECK(w.at(i, j) == 0.0);
      }
      CHECK(row == doctest::Approx(1.0));
    }
  }

  SUBCASE("degenerate shapes rejected") {
    CHECK_THROWS_AS(tse::attention_block(DTensor(Shape{2, 3}), DTensor(Shape{2, 4}),
                                         DTensor(Shape{2, 4})),
                    tse::DimensionError);
  }
}

TEST_CASE("apply_layer basics") {
  Rng rng(5);

  SUBCASE("affine with identity weight and zero bias is identity") {
    tse::Affine<double> aff;
    aff.weight = DTensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    aff.bias = DTensor(Shape{3});
    DTensor x = random_tensor(rng, {4, 3});
    auto y = tse::apply_layer<double>(aff, x);
    for (int i = 0; i < 12; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
  }

  SUBCASE("normalizing a constant row gives zeros pre-bias") {
    DTensor x = DTensor::full({2, 6}, 3.25);
    auto y = tse::layer_norm_rows(x);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.0));
  }

  SUBCASE("rectifier clamps negatives") {
    DTensor x = DTensor::from({2}, {-1.0, 2.0});
    auto y = tse::apply_layer<double>(tse::layer_from_config<double>("relu"), x);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == 2.0);
  }

  SUBCASE("unknown layer kind is a configuration error") {
    CHECK_THROWS_AS(tse::layer_from_config<double>("fourier_mixer"), tse::ConfigError);
  }
}

TEST_CASE("backward fundamentals") {
  SUBCASE("sum gives all-ones gradient") {
    DTensor x = DTensor::from({4}, {1, 2, 3, 4}, true);
    Tape<double> tape;
    auto loss = tse::sum(x);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
  }

  SUBCASE("x*x at 3 gives gradient 6") {
    DTensor x = DTensor::scalar(3.0, true);
    Tape<double> tape;
    auto loss = tse::sum(tse::mul(x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
  }

  SUBCASE("fan-out sums gradients from both consumers") {
    DTensor x = DTensor::from({3}, {1, -2, 0.5}, true);
    Tape<double> tape;
    auto branch_a = tse::scale(x, 2.0);
    auto branch_b = tse::mul(x, x);
    auto loss = tse::sum(tse::add(branch_a, branch_b));
    tape.backward(loss);
    for (int i = 0; i < 3; ++i)
      CHECK(x.grad()[i] == doctest::Approx(2.0 + 2.0 * x.at(i)));
  }

  SUBCASE("gradients accumulate across backward calls until cleared") {
    DTensor x = DTensor::from({2}, {1, 1}, true);
    {
      Tape<double> tape;
      auto loss = tse::sum(x);
      tape.backward(loss);
    }
    {
      Tape<double> tape;
      auto loss = tse::sum(x);
      tape.backward(loss);
    }
    for (double g : x.grad()) CHECK(g == 2.0);
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
  }

  SUBCASE("non-scalar loss is rejected") {
    DTensor x = DTensor::from({2}, {1, 2}, true);
    Tape<double> tape;
    auto y = tse::scale(x, 1.0);
    CHECK_THROWS_AS(tape.backward(y), tse::ContractError);
  }
}

TEST_CASE("grad_check over every registered op") {
  Rng rng(7);
  struct Case {
    const char* name;
    tse::GradCheckFn fn;
    std::vector<DTensor> inputs;
    double bound;
  };
  std::vector<Case> cases;

  cases.push_back({"affine", [](std::vector<DTensor>& in) {
    return tse::add_rowvec(tse::matmul(in[0], in[1]), in[2]);
  }, {random_tensor(rng, {5, 4}), random_tensor(rng, {4, 3}), random_tensor(rng, {3})}, 1e-6});

  cases.push_back({"conv1d", [](std::vector<DTensor>& in) {
    return tse::conv1d(in[0], in[1], 3);
  }, {random_tensor(rng, {40}), random_tensor(rng, {3, 7})}, 1e-5});

  cases.push_back({"conv1d_transpose", [](std::vector<DTensor>& in) {
    return tse::conv1d_transpose(in[0], in[1], 3);
  }, {random_tensor(rng, {6, 3}), random_tensor(rng, {3, 7})}, 1e-4});

  cases.push_back({"attention_block", [](std::vector<DTensor>& in) {
    return tse::attention_block(in[0], in[1], in[2]);
  }, {random_tensor(rng, {5, 4}), random_tensor(rng, {5, 4}), random_tensor(rng, {5, 4})}, 1e-4});

  cases.push_back({"depthwise_conv1d", [](std::vector<DTensor>& in) {
    return tse::depthwise_conv1d(in[0], in[1], 2);
  }, {random_tensor(rng, {12, 3}), random_tensor(rng, {3, 3})}, 1e-4});

  cases.push_back({"layer_norm_rows", [](std::vector<DTensor>& in) {
    return tse::layer_norm_rows(in[0]);
  }, {random_tensor(rng, {4, 6})}, 1e-4});

  cases.push_back({"causal_row_softmax", [](std::vector<DTensor>& in) {
    return tse::causal_row_softmax(in[0]);
  }, {random_tensor(rng, {5, 5})}, 1e-4});

  // keep rectifier inputs away from the kink
  DTensor relu_in = random_tensor(rng, {24});
  for (auto& v : relu_in.values()) v += v >= 0 ? 0.2 : -0.2;
  cases.push_back({"relu", [](std::vector<DTensor>& in) {
    return tse::relu(in[0]);
  }, {relu_in}, 1e-4});

  DTensor prelu_in = random_tensor(rng, {24});
  for (auto& v : prelu_in.values()) v += v >= 0 ? 0.2 : -0.2;
  cases.push_back({"prelu", [](std::vector<DTensor>& in) {
    return tse::prelu(in[0], in[1]);
  }, {prelu_in, DTensor::scalar(0.3)}, 1e-4});

  cases.push_back({"sigmoid", [](std::vector<DTensor>& in) {
    return tse::sigmoid(in[0]);
  }, {random_tensor(rng, {16})}, 1e-4});

  cases.push_back({"tanh", [](std::vector<DTensor>& in) {
    return tse::tanh_op(in[0]);
  }, {random_tensor(rng, {16})}, 1e-4});

  cases.push_back({"log", [](std::vector<DTensor>& in) {
    return tse::log_op(in[0]);
  }, {random_tensor(rng, {8}, 0.5, 3.0)}, 1e-4});

  cases.push_back({"mul_add_scale", [](std::vector<DTensor>& in) {
    return tse::scale(tse::add(tse::mul(in[0], in[1]), in[0]), 1.7);
  }, {random_tensor(rng, {10}), random_tensor(rng, {10})}, 1e-4});

  cases.push_back({"sub", [](std::vector<DTensor>& in) {
    return tse::sub(in[0], in[1]);
  }, {random_tensor(rng, {10}), random_tensor(rng, {10})}, 1e-4});

  cases.push_back({"mean_rows", [](std::vector<DTensor>& in) {
    return tse::mean_rows(in[0]);
  }, {random_tensor(rng, {6, 4})}, 1e-4});

  cases.push_back({"masked_mean_rows", [](std::vector<DTensor>& in) {
    return tse::masked_mean_rows(in[0], {1, 0, 1, 1, 0, 1});
  }, {random_tensor(rng, {6, 4})}, 1e-4});

  cases.push_back({"mean", [](std::vector<DTensor>& in) {
    return tse::mean(in[0]);
  }, {random_tensor(rng, {9})}, 1e-4});

  cases.push_back({"dot", [](std::vector<DTensor>& in) {
    return tse::dot(in[0], in[1]);
  }, {random_tensor(rng, {7}), random_tensor(rng, {7})}, 1e-4});

  cases.push_back({"transpose_matmul", [](std::vector<DTensor>& in) {
    return tse::matmul(tse::transpose(in[0]), in[1]);
  }, {random_tensor(rng, {3, 5}), random_tensor(rng, {3, 4})}, 1e-4});

  cases.push_back({"tile_rows", [](std::vector<DTensor>& in) {
    return tse::tile_rows(in[0], 5);
  }, {random_tensor(rng, {6})}, 1e-4});

  cases.push_back({"add_rowvec_mul_rowvec", [](std::vector<DTensor>& in) {
    return tse::mul_rowvec(tse::add_rowvec(in[0], in[1]), in[2]);
  }, {random_tensor(rng, {4, 3}), random_tensor(rng, {3}), random_tensor(rng, {3})}, 1e-4});

  cases.push_back({"concat_cols", [](std::vector<DTensor>& in) {
    return tse::concat_cols(in[0], in[1]);
  }, {random_tensor(rng, {4, 2}), random_tensor(rng, {4, 3})}, 1e-4});

  cases.push_back({"concat1d_slice", [](std::vector<DTensor>& in) {
    return tse::slice1d(tse::concat1d(in[0], in[1]), 1, 5);
  }, {random_tensor(rng, {4}), random_tensor(rng, {4})}, 1e-4});

  cases.push_back({"slice_cols", [](std::vector<DTensor>& in) {
    return tse::slice_cols(in[0], 1, 2);
  }, {random_tensor(rng, {5, 4})}, 1e-4});

  cases.push_back({"crop_or_pad", [](std::vector<DTensor>& in) {
    return tse::concat1d(tse::crop_or_pad(in[0], 5), tse::crop_or_pad(in[0], 11));
  }, {random_tensor(rng, {8})}, 1e-4});

  cases.push_back({"embedding_rows", [](std::vector<DTensor>& in) {
    return tse::embedding_rows(in[0], {0, 2, 1, 2});
  }, {random_tensor(rng, {3, 4})}, 1e-4});

  cases.push_back({"floor_at", [](std::vector<DTensor>& in) {
    return tse::floor_at(in[0], 0.0);
  }, {relu_in}, 1e-4});

  for (auto& c : cases) {
    CAPTURE(c.name);
    const double err = tse::grad_check(c.fn, c.inputs, 1e-5);
    INFO(c.name << " max relative error " << err);
    CHECK(err < c.bound);
  }
}

TEST_CASE("composite conv -> mask -> scale graph matches finite differences") {
  Rng rng(11);
  std::vector<DTensor> inputs = {
      random_tensor(rng, {48}),      // signal
      random_tensor(rng, {4, 8}),    // analysis filters
      random_tensor(rng, {4, 8}),    // synthesis filters
      random_tensor(rng, {6}),       // cue vector
  };
  auto fn = [](std::vector<DTensor>& in) {
    auto feats = tse::conv1d(in[0], in[1], 4);
    auto cond = tse::tile_rows(in[3], feats.dim(0));
    auto mask = tse::sigmoid(tse::slice_cols(tse::concat_cols(feats, cond), 0, feats.dim(1)));
    auto masked = tse::mul(feats, mask);
    return tse::conv1d_transpose(masked, in[2], 4);
  };
  CHECK(tse::grad_check(fn, inputs, 1e-5) < 1e-4);
}

TEST_CASE("parameter initialization is deterministic per seed") {
  Rng a(42), b(42);
  auto t1 = tse::init_fan_in<double>(a, {8, 8}, 8);
  auto t2 = tse::init_fan_in<double>(b, {8, 8}, 8);
  CHECK(t1.values() == t2.values());
}
