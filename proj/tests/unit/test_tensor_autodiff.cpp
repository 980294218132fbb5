#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "pinet/autodiff.hpp"
#include "pinet/tensor.hpp"

using namespace pinet;

namespace {

RowMatrix to_rows(const Matrix& m) { return m; }

// Evaluates a scalar function of one tensor input through the tape and
// returns (value, gradient).
using TapedFn = std::function<ad::Var(const ad::Var&)>;

std::pair<double, Tensor> taped_value_grad(const TapedFn& f, const Tensor& x) {
  ad::Tape tape;
  ad::Var v = tape.leaf(x);
  ad::Var out = ad::sum(f(v));
  ad::Gradients g = tape.backward(out);
  return {out.value().item(), g.of(v)};
}

double taped_value(const TapedFn& f, const Tensor& x) {
  ad::Tape tape;
  ad::Var v = tape.constant(x);
  return ad::sum(f(v)).value().item();
}

// Central-difference check of a primitive; returns the relative error.
double primitive_fd_error(const TapedFn& f, const Tensor& x) {
  auto [val, grad] = taped_value_grad(f, x);
  Tensor probe = x;
  Vector fd(static_cast<Eigen::Index>(x.size()));
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = taped_value(f, probe);
    probe[i] = x[i] - h;
    const double dn = taped_value(f, probe);
    probe[i] = x[i];
    fd(static_cast<Eigen::Index>(i)) = (up - dn) / (2 * h);
  }
  Vector an(static_cast<Eigen::Index>(grad.size()));
  for (std::size_t i = 0; i < grad.size(); ++i) an(static_cast<Eigen::Index>(i)) = grad[i];
  return oracle::rel_err(an, fd);
}

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  return Tensor::from_matrix(to_rows(oracle::random_matrix(rng, static_cast<Eigen::Index>(r),
                                                           static_cast<Eigen::Index>(c))));
}

}  // namespace

TEST_CASE("matmul of identity and small products") {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor p = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == a[i]);

  const Tensor row = Tensor::matrix(1, 2, {1, 2});
  const Tensor col = Tensor::matrix(2, 1, {3, 4});
  const Tensor s = matmul(row, col);
  CHECK(s.rows() == 1);
  CHECK(s.cols() == 1);
  CHECK(s.item() == 11.0);
}

TEST_CASE("matmul agrees with a triple loop on random 5x5 inputs") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix a = oracle::random_matrix(rng, 5, 5);
    const Matrix b = oracle::random_matrix(rng, 5, 5);
    const Tensor c = matmul(Tensor::from_matrix(to_rows(a)), Tensor::from_matrix(to_rows(b)));
    const Matrix ref = oracle::triple_loop_matmul(a, b);
    CHECK((Matrix(c.as_matrix()) - ref).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("matmul rejects incompatible shapes") {
  CHECK_THROWS(matmul(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}), Tensor::matrix(2, 2, {1, 2, 3, 4})));
}

TEST_CASE("pinv of diagonal and zero matrices") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 2;
  d(1, 1) = 4;
  const Matrix p = pinv(d).matrix();
  CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p(1, 1) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(std::abs(p(0, 1)) < 1e-15);
  CHECK(std::abs(p(1, 0)) < 1e-15);

  const PseudoInverse z = pinv(Matrix::Zero(3, 4));
  CHECK(z.matrix().rows() == 4);
  CHECK(z.matrix().cols() == 3);
  CHECK(z.matrix().cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.rank() == 0);
}

TEST_CASE("pinv satisfies the four Penrose identities") {
  std::mt19937_64 rng(5);
  for (auto [r, c] : {std::pair{6, 10}, std::pair{10, 6}, std::pair{7, 7}}) {
    const Matrix a = oracle::random_matrix(rng, r, c);
    const Matrix p = pinv(a).matrix();
    CHECK((a * p * a - a).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((p * a * p - p).cwiseAbs().maxCoeff() <= 1e-9);
    const Matrix ap = a * p, pa = p * a;
    CHECK((ap - ap.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((pa - pa.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("pinv drops directions below the rank tolerance") {
  std::mt19937_64 rng(6);
  const Matrix u = oracle::random_matrix(rng, 8, 3);
  const Matrix v = oracle::random_matrix(rng, 3, 5);
  const Matrix a = u * v;  // rank 3
  const PseudoInverse p = pinv(a);
  CHECK(p.rank() == 3);
  CHECK((a * p.matrix() * a - a).cwiseAbs().maxCoeff() <= 1e-9);
  const Matrix proj = p.row_space_projector();
  CHECK((proj * proj - proj).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("condition number of a diagonal matrix") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, 10.0, 1e3;
  CHECK(condition_number(d) == doctest::Approx(1e3).epsilon(1e-12));
}

TEST_CASE("gradient of w^2 at 3") {
  ad::Tape tape;
  ad::Var w = tape.leaf(Tensor::scalar(3.0));
  ad::Var y = ad::square(w);
  const ad::Gradients g = tape.backward(y, Tensor::scalar(1.0));
  CHECK(g.of(w).item() == doctest::Approx(6.0));
}

TEST_CASE("relu passes no gradient at a negative input") {
  ad::Tape tape;
  ad::Var w = tape.leaf(Tensor::from_vector(Vector::Constant(1, -0.7)));
  const ad::Gradients g = tape.backward(ad::sum(ad::relu(w)));
  CHECK(g.of(w)[0] == 0.0);
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(21);
  const Tensor x = random_tensor(rng, 3, 4);
  const Tensor y = random_tensor(rng, 3, 4);
  const Tensor w = random_tensor(rng, 4, 2);
  const Tensor bias = Tensor::from_vector(oracle::random_vector(rng, 4));
  const Tensor row = Tensor::from_vector(oracle::random_vector(rng, 4));

  auto with_const = [](const Tensor& c, auto op) {
    return [c, op](const ad::Var& v) { return op(v, v.tape().constant(c)); };
  };
  // Keep relu and clamp inputs away from their kinks.
  Tensor away = x;
  for (std::size_t i = 0; i < away.size(); ++i) {
    if (std::abs(away[i]) < 0.05) away[i] += 0.2;
  }

  struct Case {
    const char* name;
    TapedFn f;
    Tensor at;
  };
  const std::vector<Case> cases{
      {"matmul lhs", with_const(w, [](auto a, auto b) { return ad::matmul(a, b); }), x},
      {"matmul rhs", [x](const ad::Var& v) { return ad::matmul(v.tape().constant(x), v); }, w},
      {"add", with_const(y, [](auto a, auto b) { return ad::add(a, b); }), x},
      {"sub", [y](const ad::Var& v) { return ad::sub(v.tape().constant(y), v); }, x},
      {"mul", with_const(y, [](auto a, auto b) { return ad::mul(a, b); }), x},
      {"mul self", [](const ad::Var& v) { return ad::mul(v, v); }, x},
      {"add_row", with_const(bias, [](auto a, auto b) { return ad::add_row(a, b); }), x},
      {"add_row bias", [x](const ad::Var& v) { return ad::square(ad::add_row(v.tape().constant(x), v)); }, bias},
      {"mul_row", [row](const ad::Var& v) { return ad::mul_row(v, row); }, x},
      {"scale", [](const ad::Var& v) { return ad::scale(v, -2.5); }, x},
      {"add_const", [y](const ad::Var& v) { return ad::square(ad::add_const(v, y)); }, x},
      {"add_scalar", [](const ad::Var& v) { return ad::square(ad::add_scalar(v, 0.3)); }, x},
      {"relu", [](const ad::Var& v) { return ad::square(ad::relu(v)); }, away},
      {"sin", [](const ad::Var& v) { return ad::sin(v); }, x},
      {"cos", [](const ad::Var& v) { return ad::cos(v); }, x},
      {"exp", [](const ad::Var& v) { return ad::exp(v); }, x},
      {"square", [](const ad::Var& v) { return ad::square(v); }, x},
      {"clamp_max", [](const ad::Var& v) { return ad::square(ad::clamp_max(v, 0.0)); }, away},
      {"mean", [](const ad::Var& v) { return ad::square(ad::mean(ad::square(v))); }, x},
      {"sum_cols", [](const ad::Var& v) { return ad::square(ad::sum_cols(v)); }, x},
      {"slice_cols", [](const ad::Var& v) { return ad::square(ad::slice_cols(v, 1, 2)); }, x},
  };
  for (const Case& c : cases) {
    INFO(c.name);
    CHECK(primitive_fd_error(c.f, c.at) <= 1e-5);
  }
}

TEST_CASE("two-layer MLP weight gradients match central differences") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, 6, 4);
  Tensor w1 = random_tensor(rng, 4, 7), w2 = random_tensor(rng, 7, 3);
  Tensor b1 = Tensor::from_vector(oracle::random_vector(rng, 7));
  Tensor b2 = Tensor::from_vector(oracle::random_vector(rng, 3));

  auto loss = [&](const Tensor& a1, const Tensor& c1, const Tensor& a2, const Tensor& c2,
                  std::vector<Tensor>* grads) {
    ad::Tape tape;
    ad::Var vw1 = tape.leaf(a1), vb1 = tape.leaf(c1), vw2 = tape.leaf(a2), vb2 = tape.leaf(c2);
    ad::Var h = ad::relu(ad::add_row(ad::matmul(tape.constant(x), vw1), vb1));
    ad::Var o = ad::add_row(ad::matmul(h, vw2), vb2);
    ad::Var l = ad::mean(ad::sin(o));
    if (grads) {
      const ad::Gradients g = tape.backward(l);
      *grads = {g.of(vw1), g.of(vb1), g.of(vw2), g.of(vb2)};
    }
    return l.value().item();
  };

  std::vector<Tensor> grads;
  loss(w1, b1, w2, b2, &grads);
  std::vector<Tensor*> params{&w1, &b1, &w2, &b2};
  const double h = 1e-6;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    Vector fd(static_cast<Eigen::Index>(t.size())), an(static_cast<Eigen::Index>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t[i];
      t[i] = keep + h;
      const double up = loss(w1, b1, w2, b2, nullptr);
      t[i] = keep - h;
      const double dn = loss(w1, b1, w2, b2, nullptr);
      t[i] = keep;
      fd(static_cast<Eigen::Index>(i)) = (up - dn) / (2 * h);
      an(static_cast<Eigen::Index>(i)) = grads[p][i];
    }
    INFO("parameter block " << p);
    CHECK(oracle::rel_err(an, fd) <= 1e-5);
  }
}

TEST_CASE("backward is linear in the seed") {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor(rng, 4, 3);
  const Tensor w = random_tensor(rng, 3, 5);
  ad::Tape tape;
  ad::Var vx = tape.leaf(x);
  ad::Var out = ad::sin(ad::matmul(vx, tape.constant(w)));
  const Tensor v1 = random_tensor(rng, 4, 5), v2 = random_tensor(rng, 4, 5);
  const double alpha = 0.7, beta = -1.9;
  Tensor mix = v1;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * v1[i] + beta * v2[i];
  const Tensor g1 = tape.backward(out, v1).of(vx);
  const Tensor g2 = tape.backward(out, v2).of(vx);
  const Tensor gm = tape.backward(out, mix).of(vx);
  for (std::size_t i = 0; i < gm.size(); ++i) {
    CHECK(std::abs(gm[i] - (alpha * g1[i] + beta * g2[i])) <= 1e-10);
  }
}

TEST_CASE("fan-out accumulates gradients") {
  ad::Tape tape;
  ad::Var w = tape.leaf(Tensor::scalar(2.0));
  ad::Var y = ad::add(ad::mul(w, w), ad::scale(w, 3.0));  // w^2 + 3w
  CHECK(tape.backward(y).of(w).item() == doctest::Approx(7.0));
}

TEST_CASE("constants receive no gradient") {
  ad::Tape tape;
  ad::Var c = tape.constant(Tensor::scalar(2.0));
  ad::Var w = tape.leaf(Tensor::scalar(1.0));
  const ad::Gradients g = tape.backward(ad::mul(c, w));
  CHECK_FALSE(g.reached(c));
  CHECK(g.of(w).item() == doctest::Approx(2.0));
}

TEST_CASE("custom VJP: identity and doubling") {
  ad::CustomOp ident(
      [](std::span<const Tensor> in) { return std::pair<Tensor, std::any>{in[0], {}}; },
      [](const std::any&, const Tensor& cot) { return std::vector<Tensor>{cot}; });
  ad::CustomOp twice = ad::register_custom_vjp(
      [](std::span<const Tensor> in) {
        Tensor out = in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= 2;
        return std::pair<Tensor, std::any>{out, {}};
      },
      [](const std::any&, const Tensor& cot) {
        Tensor g = cot;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 2;
        return std::vector<Tensor>{g};
      });

  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::matrix(1, 3, {1, -2, 5}));
  const Tensor seed = Tensor::matrix(1, 3, {0.5, 4, -1});
  const Tensor gi = tape.backward(ident(x), seed).of(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(gi[i] == seed[i]);

  ad::Var y = ad::sum(twice(x));
  CHECK(y.value().item() == doctest::Approx(8.0));
  const Tensor gt = tape.backward(y).of(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(gt[i] == doctest::Approx(2.0));
}

TEST_CASE("tensor shape helpers") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.rank() == 2);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.all_finite());
  t.at(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS(Tensor({2, 2}, std::vector<double>{1, 2, 3}));
}
