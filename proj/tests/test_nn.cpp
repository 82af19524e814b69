#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "qdz/net.hpp"
#include "qdz/rng.hpp"

using namespace qdz;

namespace {

// Scaled relative error with a floor at 1e-3: central differences at
// h = 1e-6 carry ~1e-9 of cancellation noise, so errors below the floor are
// measured absolutely.
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a) + std::abs(b), 1e-3});
}

/// Straight-line forward oracle, no shared code with Network::forward.
std::vector<double> oracle_forward(const Network& net,
                                   std::span<const double> input) {
  std::vector<double> current(input.begin(), input.end());
  for (const auto& layer : net.layers()) {
    std::vector<double> next(layer.out, 0.0);
    for (std::size_t j = 0; j < layer.out; ++j) {
      double acc = layer.bias[j];
      for (std::size_t i = 0; i < layer.in; ++i) {
        acc += current[i] * layer.weights[i * layer.out + j];
      }
      next[j] = layer.act == Activation::relu ? std::max(0.0, acc) : acc;
    }
    current = std::move(next);
  }
  return current;
}

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Tensor t(rows, cols);
  rng::Stream stream(seed, 0xBA7C4ull);
  for (auto& v : t.data) v = stream.gauss();
  return t;
}

std::vector<int> random_labels(std::size_t rows, int classes,
                               std::uint64_t seed) {
  std::vector<int> labels(rows);
  rng::Stream stream(seed, 0x1AB5ull);
  for (auto& y : labels) y = static_cast<int>(stream.below(classes));
  return labels;
}

/// Central-difference gradient of an arbitrary scalar loss over every
/// weight and bias of the network.
template <class LossFn>
std::vector<LayerGrads> fd_gradients(Network net, const Tensor& x,
                                     LossFn loss_of_net, double h = 1e-6) {
  std::vector<LayerGrads> grads(net.layers().size());
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    grads[l].weights.assign(net.layers()[l].weights.size(), 0.0);
    grads[l].bias.assign(net.layers()[l].bias.size(), 0.0);
    for (std::size_t i = 0; i < grads[l].weights.size(); ++i) {
      const double saved = net.layers()[l].weights[i];
      net.layers()[l].weights[i] = saved + h;
      const double up = loss_of_net(net, x);
      net.layers()[l].weights[i] = saved - h;
      const double down = loss_of_net(net, x);
      net.layers()[l].weights[i] = saved;
      grads[l].weights[i] = (up - down) / (2.0 * h);
    }
    for (std::size_t i = 0; i < grads[l].bias.size(); ++i) {
      const double saved = net.layers()[l].bias[i];
      net.layers()[l].bias[i] = saved + h;
      const double up = loss_of_net(net, x);
      net.layers()[l].bias[i] = saved - h;
      const double down = loss_of_net(net, x);
      net.layers()[l].bias[i] = saved;
      grads[l].bias[i] = (up - down) / (2.0 * h);
    }
  }
  return grads;
}

}  // namespace

TEST_CASE("forward computes affine + activation compositions") {
  SECTION("identity single layer echoes the input") {
    Network net;
    DenseLayer layer;
    layer.in = layer.out = 3;
    layer.weights = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    layer.bias = {0, 0, 0};
    net.layers().push_back(layer);

    Tensor x(2, 3);
    x.data = {1.0, -2.0, 3.0, 0.5, 0.0, -0.25};
    const Tensor y = forward(net, x);
    REQUIRE(y.data == x.data);
  }
  SECTION("relu clamps negatives") {
    Network net;
    DenseLayer layer;
    layer.in = layer.out = 2;
    layer.weights = {1, 0, 0, 1};
    layer.bias = {0, 0};
    layer.act = Activation::relu;
    net.layers().push_back(layer);
    Tensor x(1, 2);
    x.data = {-1.0, 2.0};
    REQUIRE(forward(net, x).data == std::vector<double>{0.0, 2.0});
  }
  SECTION("matches the straight-line oracle on random nets") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const std::size_t hidden[] = {16};
      const Network net = Network::dense_classifier(4, hidden, 3, seed);
      const Tensor x = random_batch(5, 4, seed);
      const Tensor y = forward(net, x);
      for (std::size_t r = 0; r < x.rows; ++r) {
        const auto expected = oracle_forward(
            net, std::span<const double>(&x.data[r * 4], 4));
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(std::abs(y.at(r, c) - expected[c]) <= 1e-12);
        }
      }
    }
  }
  SECTION("shape mismatch is rejected") {
    const std::size_t hidden[] = {4};
    const Network net = Network::dense_classifier(3, hidden, 2, 1);
    REQUIRE_THROWS_AS(forward(net, Tensor(2, 5)), std::invalid_argument);
  }
}

TEST_CASE("softmax_T behaves like a tempered distribution") {
  SECTION("equal logits give the uniform distribution at any T") {
    Tensor z(1, 4);
    z.data = {3.0, 3.0, 3.0, 3.0};
    for (double T : {0.5, 1.0, 5.0}) {
      const Tensor p = softmax_T(z, T);
      for (double v : p.data) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));
    }
  }
  SECTION("very large T flattens toward uniform") {
    Tensor z(1, 2);
    z.data = {0.0, 100.0};
    const Tensor p = softmax_T(z, 1e6);
    REQUIRE(std::abs(p.data[0] - 0.5) <= 1e-4);
    REQUIRE(std::abs(p.data[1] - 0.5) <= 1e-4);
  }
  SECTION("closed form at T=1") {
    Tensor z(1, 2);
    z.data = {0.0, std::log(3.0)};
    const Tensor p = softmax_T(z, 1.0);
    REQUIRE(p.data[0] == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(p.data[1] == Catch::Approx(0.75).margin(1e-12));
  }
  SECTION("rows sum to one and shifting logits changes nothing") {
    const Tensor z = random_batch(6, 5, 11);
    Tensor shifted = z;
    for (std::size_t r = 0; r < z.rows; ++r) {
      for (std::size_t c = 0; c < z.cols; ++c) shifted.at(r, c) += 17.5;
    }
    const Tensor p = softmax_T(z, 2.5);
    const Tensor q = softmax_T(shifted, 2.5);
    for (std::size_t r = 0; r < z.rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < z.cols; ++c) {
        sum += p.at(r, c);
        REQUIRE(p.at(r, c) == Catch::Approx(q.at(r, c)).margin(1e-12));
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("distillation loss endpoints") {
  const Tensor student = random_batch(4, 3, 21);
  const Tensor teacher = random_batch(4, 3, 22);
  const std::vector<int> labels{0, 2, 1, 0};

  SECTION("gamma 0 is exactly cross-entropy") {
    const LossValue plain = cross_entropy_loss(student, labels);
    const LossValue mixed =
        distillation_loss(student, teacher, labels, {5.0, 0.0});
    REQUIRE(mixed.loss == plain.loss);
    REQUIRE(mixed.dlogits.data == plain.dlogits.data);
  }
  SECTION("gamma 1 with student == teacher reaches the soft minimum T^2 H(q)") {
    for (double T : {1.0, 5.0}) {
      const LossValue v = distillation_loss(teacher, teacher, labels, {T, 1.0});
      const Tensor q = softmax_T(teacher, T);
      double h = 0.0;
      for (std::size_t r = 0; r < q.rows; ++r) {
        for (std::size_t c = 0; c < q.cols; ++c) {
          h -= q.at(r, c) * std::log(q.at(r, c));
        }
      }
      h /= static_cast<double>(q.rows);
      REQUIRE(v.loss == Catch::Approx(T * T * h).margin(1e-10));
    }
  }
  SECTION("loss is non-negative") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor s = random_batch(3, 4, 100 + seed);
      const Tensor t = random_batch(3, 4, 200 + seed);
      const std::vector<int> lab{1, 3, 0};
      const LossValue v = distillation_loss(s, t, lab, {4.0, 0.7});
      REQUIRE(v.loss >= 0.0);
    }
  }
  SECTION("soft cross-entropy is convex in student probabilities") {
    // Midpoint convexity of -sum q log p over the probability simplex.
    rng::Stream stream(77, 0xC0FEull);
    for (int instance = 0; instance < 100; ++instance) {
      std::vector<double> q(4), p1(4), p2(4);
      auto fill = [&](std::vector<double>& prob) {
        double sum = 0.0;
        for (auto& v : prob) {
          v = stream.u01() + 1e-6;
          sum += v;
        }
        for (auto& v : prob) v /= sum;
      };
      fill(q);
      fill(p1);
      fill(p2);
      auto ce = [&](const std::vector<double>& p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) acc -= q[i] * std::log(p[i]);
        return acc;
      };
      std::vector<double> mid(4);
      for (std::size_t i = 0; i < 4; ++i) mid[i] = 0.5 * (p1[i] + p2[i]);
      REQUIRE(ce(mid) <= 0.5 * ce(p1) + 0.5 * ce(p2) + 1e-12);
    }
  }
  SECTION("label range is validated") {
    const std::vector<int> bad{0, 1, 3, 0};
    REQUIRE_THROWS_AS(cross_entropy_loss(student, bad), std::invalid_argument);
  }
}

TEST_CASE("analytic gradients match central differences") {
  // Randomized 2-16-2 nets, distillation loss at T=5, gamma=0.5.
  const DistillationConfig cfg{5.0, 0.5};
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const std::size_t hidden[] = {16};
    Network net = Network::dense_classifier(2, hidden, 2, seed);
    const std::size_t hidden_teacher[] = {8};
    const Network teacher = Network::dense_classifier(2, hidden_teacher, 2,
                                                      seed + 9999);
    const Tensor x = random_batch(6, 2, seed);
    const std::vector<int> labels = random_labels(6, 2, seed);
    const Tensor teacher_logits = forward(teacher, x);

    const ForwardTrace trace = forward_trace(net, x);
    const LossValue loss =
        distillation_loss(trace.logits, teacher_logits, labels, cfg);
    const auto analytic = backward(net, trace, loss.dlogits);

    auto loss_of = [&](const Network& candidate, const Tensor& input) {
      return distillation_loss(forward(candidate, input), teacher_logits,
                               labels, cfg)
          .loss;
    };
    const auto numeric = fd_gradients(net, x, loss_of);

    double worst = 0.0;
    for (std::size_t l = 0; l < analytic.size(); ++l) {
      for (std::size_t i = 0; i < analytic[l].weights.size(); ++i) {
        worst = std::max(worst,
                         rel_err(analytic[l].weights[i], numeric[l].weights[i]));
      }
      for (std::size_t i = 0; i < analytic[l].bias.size(); ++i) {
        worst = std::max(worst, rel_err(analytic[l].bias[i], numeric[l].bias[i]));
      }
    }
    REQUIRE(worst <= 1e-5);
  }
}

TEST_CASE("distillation logit gradient matches finite differences") {
  // Gradient with respect to the logits themselves (T=5, gamma=0.5).
  const DistillationConfig cfg{5.0, 0.5};
  const Tensor teacher = random_batch(4, 3, 31);
  const std::vector<int> labels{0, 1, 2, 1};
  Tensor z = random_batch(4, 3, 32);
  const LossValue analytic = distillation_loss(z, teacher, labels, cfg);

  const double h = 1e-6;
  for (std::size_t i = 0; i < z.data.size(); ++i) {
    const double saved = z.data[i];
    z.data[i] = saved + h;
    const double up = distillation_loss(z, teacher, labels, cfg).loss;
    z.data[i] = saved - h;
    const double down = distillation_loss(z, teacher, labels, cfg).loss;
    z.data[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    REQUIRE(rel_err(analytic.dlogits.data[i], fd) <= 1e-6);
  }
}

TEST_CASE("linear net with squared-error head matches the closed form") {
  // Single linear layer, loss = 0.5 ||xW + b - y||^2: gradient w.r.t. W is
  // x^T (xW + b - y), the normal-equation residual form.
  Network net;
  DenseLayer layer;
  layer.in = 3;
  layer.out = 2;
  rng::Stream stream(41, 0x11AAull);
  layer.weights.resize(6);
  for (auto& w : layer.weights) w = stream.gauss();
  layer.bias = {0.1, -0.2};
  net.layers().push_back(layer);

  const Tensor x = random_batch(5, 3, 42);
  Tensor target(5, 2);
  for (auto& v : target.data) v = stream.gauss();

  const ForwardTrace trace = forward_trace(net, x);
  Tensor dlogits(5, 2);
  for (std::size_t i = 0; i < dlogits.data.size(); ++i) {
    dlogits.data[i] = trace.logits.data[i] - target.data[i];
  }
  const auto grads = backward(net, trace, dlogits);

  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double expected = 0.0;
      for (std::size_t r = 0; r < 5; ++r) {
        expected += x.at(r, i) * (trace.logits.at(r, j) - target.at(r, j));
      }
      REQUIRE(std::abs(grads[0].weights[i * 2 + j] - expected) <= 1e-10);
    }
  }
}

TEST_CASE("sgd_step updates in place") {
  SECTION("zero gradient leaves weights unchanged") {
    const std::size_t hidden[] = {4};
    Network net = Network::dense_classifier(2, hidden, 2, 3);
    const Network before = net;
    std::vector<LayerGrads> zeros(net.layers().size());
    for (std::size_t l = 0; l < zeros.size(); ++l) {
      zeros[l].weights.assign(net.layers()[l].weights.size(), 0.0);
      zeros[l].bias.assign(net.layers()[l].bias.size(), 0.0);
    }
    sgd_step(net, zeros, 0.1);
    for (std::size_t l = 0; l < zeros.size(); ++l) {
      REQUIRE(net.layers()[l].weights == before.layers()[l].weights);
    }
  }
  SECTION("scalar update") {
    Network net;
    DenseLayer layer;
    layer.in = layer.out = 1;
    layer.weights = {1.0};
    layer.bias = {0.0};
    net.layers().push_back(layer);
    std::vector<LayerGrads> grads(1);
    grads[0].weights = {2.0};
    grads[0].bias = {0.0};
    sgd_step(net, grads, 0.1);
    REQUIRE(net.layers()[0].weights[0] == Catch::Approx(0.8).margin(1e-15));
  }
  SECTION("quadratic bowl converges") {
    // Minimize 0.5 (w - 3)^2 via the squared-error head on input 1.
    Network net;
    DenseLayer layer;
    layer.in = layer.out = 1;
    layer.weights = {1.0};
    layer.bias = {0.0};
    net.layers().push_back(layer);
    Tensor x(1, 1);
    x.data = {1.0};
    for (int step = 0; step < 200; ++step) {
      const ForwardTrace trace = forward_trace(net, x);
      Tensor dlogits(1, 1);
      dlogits.data = {trace.logits.data[0] - 3.0};
      sgd_step(net, backward(net, trace, dlogits), 0.1);
      net.layers()[0].bias[0] = 0.0;  // keep the problem one-dimensional
    }
    REQUIRE(std::abs(net.layers()[0].weights[0] - 3.0) <= 1e-6);
  }
}

TEST_CASE("seeded training nets are reproducible") {
  const std::size_t hidden[] = {16, 8};
  const Network a = Network::dense_classifier(4, hidden, 3, 123);
  const Network b = Network::dense_classifier(4, hidden, 3, 123);
  const Network c = Network::dense_classifier(4, hidden, 3, 124);
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    REQUIRE(a.layers()[l].weights == b.layers()[l].weights);
  }
  REQUIRE(a.layers()[0].weights != c.layers()[0].weights);
}
