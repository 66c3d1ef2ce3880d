#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "sigcn/errors.hpp"
#include "sigcn/gradcheck.hpp"
#include "sigcn/gradcheck_suite.hpp"
#include "sigcn/kernels.hpp"
#include "sigcn/tape.hpp"
#include "sigcn/tensor_io.hpp"

using namespace sigcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("sigcn_numerics_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul identity and hand cases") {
    Tensor b = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(matmul(Tensor::identity(2), b) == b);
    CHECK(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{0}, {1}})) ==
          Tensor::matrix({{2}, {4}}));
  }

  TEST_CASE("matmul matches triple loop") {
    SplitMix64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      Tensor a = oracle::random_tensor(rng, {5, 4});
      Tensor b = oracle::random_tensor(rng, {4, 3});
      CHECK(max_abs_diff(matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
    }
  }

  TEST_CASE("matmul associativity") {
    SplitMix64 rng(12);
    for (int rep = 0; rep < 50; ++rep) {
      Tensor a = oracle::random_tensor(rng, {3, 4});
      Tensor b = oracle::random_tensor(rng, {4, 5});
      Tensor c = oracle::random_tensor(rng, {5, 2});
      CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-9);
    }
  }

  TEST_CASE("matmul dimension mismatch") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    Tape tape;
    CHECK_THROWS_AS(matmul(tape.leaf(Tensor::zeros({2, 3})), tape.leaf(Tensor::zeros({2, 3}))),
                    ShapeError);
  }

  TEST_CASE("constructors validate") {
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({4}).reshaped({3}), ShapeError);
    CHECK(Tensor::zeros({2, 3}).reshaped({3, 2}).dims() == Shape{3, 2});
  }
}

TEST_SUITE("tape") {
  TEST_CASE("grad of sum is ones") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 3}, {1, -2, 3, 0.5, 9, -7}));
    CHECK(tape.grad(sum(x), x) == Tensor::full({2, 3}, 1.0));
  }

  TEST_CASE("grad of sum(x * x)") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1, 2}));
    CHECK(tape.grad(sum(mul(x, x)), x) == Tensor({2}, {2, 4}));
  }

  TEST_CASE("matmul gradients") {
    Tape tape;
    Tensor av = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor bv = Tensor::matrix({{5, 6}, {7, 8}});
    Var a = tape.leaf(av), b = tape.leaf(bv);
    Var loss = sum(matmul(a, b));
    // d/dA sum(AB) = 1 B^T, d/dB = A^T 1.
    CHECK(tape.grad(loss, a) == Tensor::matrix({{11, 15}, {11, 15}}));
    CHECK(tape.grad(loss, b) == Tensor::matrix({{4, 4}, {6, 6}}));
  }

  TEST_CASE("lineage errors") {
    Tape t1, t2;
    Var x = t1.leaf(Tensor({2}, {1, 2}));
    Var y = t2.leaf(Tensor({2}, {1, 2}));
    Var c = t1.constant(Tensor({2}, {1, 2}));
    Var loss = sum(x);
    CHECK_THROWS_AS(t1.grad(loss, y), LineageError);
    CHECK_THROWS_AS(t1.grad(loss, c), LineageError);
    CHECK_THROWS_AS(t1.grad(x, x), ShapeError);
    CHECK_THROWS_AS(add(x, y), LineageError);
  }

  TEST_CASE("unreachable leaf gets zeros") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1, 2}));
    Var z = tape.leaf(Tensor({3}, {1, 2, 3}));
    CHECK(tape.grad(sum(x), z) == Tensor::zeros({3}));
  }

  TEST_CASE("elementwise ops") {
    Tape tape;
    Var a = tape.leaf(Tensor({3}, {-1, 0, 2}));
    Var b = tape.leaf(Tensor({3}, {4, 5, 6}));
    CHECK(add(a, b).value() == Tensor({3}, {3, 5, 8}));
    CHECK(sub(a, b).value() == Tensor({3}, {-5, -5, -4}));
    CHECK(mul(a, b).value() == Tensor({3}, {-4, 0, 12}));
    CHECK(scale(a, 2).value() == Tensor({3}, {-2, 0, 4}));
    CHECK(relu(a).value() == Tensor({3}, {0, 0, 2}));
    CHECK(sigmoid(a).value()[1] == 0.5);
    CHECK(mean(b).value().item() == doctest::Approx(5.0));
  }

  TEST_CASE("relu and sigmoid are monotone") {
    SplitMix64 rng(3);
    Tensor x({200});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = -10.0 + 0.1 * static_cast<double>(i);
    Tape tape;
    Var v = tape.leaf(x);
    Tensor r = relu(v).value(), s = sigmoid(v).value();
    for (std::size_t i = 1; i < x.size(); ++i) {
      CHECK(r[i] >= r[i - 1]);
      CHECK(s[i] >= s[i - 1]);
    }
  }

  TEST_CASE("transpose, reshape, concat") {
    Tape tape;
    Var a = tape.leaf(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    CHECK(transpose(a).value() == Tensor::matrix({{1, 4}, {2, 5}, {3, 6}}));
    CHECK(reshape(a, {3, 2}).value() == Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
    Var p = tape.leaf(Tensor({1, 2, 2}, {1, 2, 3, 4}));
    Var q = tape.leaf(Tensor({2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12}));
    const Var parts[] = {p, q};
    Var cat = concat(parts);
    CHECK(cat.dims() == Shape{3, 2, 2});
    CHECK(cat.value()[4] == 5);
    // Gradient of a weighted sum splits back into the parts.
    Var loss = sum(mul(cat, tape.constant(Tensor::full({3, 2, 2}, 2.0))));
    CHECK(tape.grad(loss, q) == Tensor::full({2, 2, 2}, 2.0));
  }

  TEST_CASE("mean_pool") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 1, 2}, {1, 3, 10, 20}));
    CHECK(mean_pool(x).value() == Tensor({2}, {2, 15}));
  }

  TEST_CASE("bilinear resize to same size is identity") {
    SplitMix64 rng(4);
    Tensor x = oracle::random_tensor(rng, {3, 5, 7});
    CHECK(max_abs_diff(kernels::bilinear_resize(x, 5, 7), x) <= 1e-12);
    Tape tape;
    CHECK(max_abs_diff(bilinear_resize(tape.leaf(x), 5, 7).value(), x) <= 1e-12);
  }

  TEST_CASE("bilinear resize aligns corners") {
    Tensor x({1, 2, 2}, {0, 1, 2, 3});
    Tensor y = kernels::bilinear_resize(x, 3, 3);
    CHECK(y.at(0, 0, 0) == 0);
    CHECK(y.at(0, 2, 2) == 3);
    CHECK(y.at(0, 1, 1) == doctest::Approx(1.5));
    CHECK(y.at(0, 0, 1) == doctest::Approx(0.5));
  }

  TEST_CASE("conv2d matches a direct loop with dilation") {
    SplitMix64 rng(5);
    for (std::size_t dil : {1u, 2u, 3u}) {
      Tensor x = oracle::random_tensor(rng, {2, 6, 5});
      Tensor w = oracle::random_tensor(rng, {3, 2, 3, 3});
      Tensor b = oracle::random_tensor(rng, {3});
      Tensor y = kernels::conv2d(x, w, b, dil);
      Tensor ref({3, 6, 5});
      for (std::size_t o = 0; o < 3; ++o)
        for (long i = 0; i < 6; ++i)
          for (long j = 0; j < 5; ++j) {
            double acc = b[o];
            for (std::size_t c = 0; c < 2; ++c)
              for (long u = 0; u < 3; ++u)
                for (long v = 0; v < 3; ++v) {
                  const long si = i + (u - 1) * static_cast<long>(dil);
                  const long sj = j + (v - 1) * static_cast<long>(dil);
                  if (si < 0 || si >= 6 || sj < 0 || sj >= 5) continue;
                  acc += w[((o * 2 + c) * 3 + u) * 3 + v] *
                         x.at(c, static_cast<std::size_t>(si), static_cast<std::size_t>(sj));
                }
            ref.at(o, i, j) = acc;
          }
      CHECK(max_abs_diff(y, ref) <= 1e-12);
    }
  }

  TEST_CASE("conv2d zero weights yield bias") {
    Tensor y = kernels::conv2d(Tensor::full({2, 3, 3}, 5.0), Tensor::zeros({1, 2, 3, 3}),
                               Tensor({1}, {0.25}), 1);
    CHECK(y == Tensor::full({1, 3, 3}, 0.25));
    CHECK_THROWS_AS(kernels::conv2d(Tensor::zeros({2, 3, 3}), Tensor::zeros({1, 2, 2, 2}),
                                    Tensor::zeros({1}), 1),
                    ShapeError);
  }

  TEST_CASE("instance_normalize gives zero mean, unit variance") {
    SplitMix64 rng(6);
    Tape tape;
    Tensor y = instance_normalize(tape.leaf(oracle::random_tensor(rng, {3, 4, 4}, 0, 50)))
                   .value();
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (std::size_t p = 0; p < 16; ++p) m += y[c * 16 + p] / 16;
      for (std::size_t p = 0; p < 16; ++p) v += (y[c * 16 + p] - m) * (y[c * 16 + p] - m) / 16;
      CHECK(std::abs(m) <= 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("bce at p = 0.5 is ln 2") {
    Tape tape;
    Var p = tape.leaf(Tensor::full({4, 4}, 0.5));
    Tensor y = Tensor::zeros({4, 4});
    y[3] = 1;
    CHECK(bce(p, y).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("replay reproduces every node") {
    SplitMix64 rng(7);
    Tape tape;
    Var x = tape.leaf(oracle::random_tensor(rng, {2, 4, 4}));
    Var w = tape.leaf(oracle::random_tensor(rng, {3, 2, 3, 3}));
    Var b = tape.leaf(oracle::random_tensor(rng, {3}));
    Var y = sigmoid(relu(conv2d(x, w, b, 2)));
    (void)sum(bilinear_resize(y, 7, 7));
    CHECK(tape.replay_matches());
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("suite passes at the default tolerance") {
    for (const OpCheckReport& r : run_gradient_suite(42, 3)) {
      INFO(r.op);
      CHECK(r.compared > 0);
      CHECK(r.max_rel_err <= 1e-4);
    }
  }

  TEST_CASE("a wrong backward is caught") {
    // Forward x^2, backward claims 3x.
    LossBuilder build = [](Tape& tape, std::span<const Var> in) {
      Var sq = tape.record(
          "bad_square", {in[0]},
          [](Tape::Inputs xs) {
            Tensor out = *xs[0];
            for (double& v : out.data()) v *= v;
            return out;
          },
          [](const Tensor& g, Tape::Inputs xs, const Tensor&) {
            Tensor d = *xs[0];
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = 3 * d[i] * g[i];
            return std::vector<Tensor>{d};
          });
      return sum(sq);
    };
    GradCheckResult r = check_gradients(build, {Tensor({3}, {0.5, -1.0, 2.0})});
    CHECK(r.compared == 3);
    CHECK(r.max_rel_err == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }

  TEST_CASE("kinks are skipped, not compared") {
    LossBuilder build = [](Tape&, std::span<const Var> in) { return sum(relu(in[0])); };
    GradCheckResult r = check_gradients(build, {Tensor({3}, {1.0, 5e-5, -2.0})});
    CHECK(r.kinks == 1);
    CHECK(r.max_rel_err <= 1e-9);
  }
}

TEST_SUITE("tensor_io") {
  TEST_CASE("STNSR1 round trip is bit exact for f32 values") {
    SplitMix64 rng(8);
    fs::path dir = scratch_dir("roundtrip");
    for (const Shape& dims : {Shape{5}, Shape{3, 4}, Shape{2, 3, 4}, Shape{2, 1, 3, 2}}) {
      Tensor t = round_to_f32(oracle::random_tensor(rng, dims, -1e3, 1e3));
      write_tensor(dir / "t.stnsr", t);
      CHECK(read_tensor(dir / "t.stnsr") == t);
    }
  }

  TEST_CASE("layout is magic, rank, u32 dims, f32 payload") {
    auto bytes = encode_tensor(Tensor({2, 1}, {1.0, -2.0}));
    REQUIRE(bytes.size() == 6 + 1 + 8 + 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "STNSR1");
    CHECK(bytes[6] == 2);
    CHECK(bytes[7] == 2);
    CHECK(bytes[11] == 1);
    // 1.0f = 0x3F800000 little-endian.
    CHECK(bytes[15] == 0x00);
    CHECK(bytes[18] == 0x3F);
    CHECK(bytes[17] == 0x80);
  }

  TEST_CASE("corrupt files raise distinct errors") {
    fs::path dir = scratch_dir("corrupt");
    auto bytes = encode_tensor(Tensor::full({4, 4}, 1.0));
    std::vector<unsigned char> truncated(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(decode_tensor(truncated), DimMismatchError);
    auto padded = bytes;
    padded.push_back(0);
    CHECK_THROWS_AS(decode_tensor(padded), DimMismatchError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_tensor(bad), BadMagicError);
    auto rank0 = bytes;
    rank0[6] = 0;
    CHECK_THROWS_AS(decode_tensor(rank0), FormatError);
    CHECK_THROWS_AS(read_tensor(dir / "absent.stnsr"), MissingFileError);
  }

  TEST_CASE("PGM round trip") {
    fs::path dir = scratch_dir("pgm");
    Tensor m = Tensor::matrix({{0, 1, 0.5}, {2, -1, 0.2}});
    write_pgm(dir / "m.pgm", m);
    Tensor back = read_pgm(dir / "m.pgm");
    CHECK(back.at(0, 0) == 0);
    CHECK(back.at(0, 1) == 1);
    CHECK(back.at(1, 0) == 1);  // clamped
    CHECK(back.at(1, 1) == 0);
    CHECK(back.at(0, 2) == doctest::Approx(128.0 / 255.0));
    CHECK(back.at(1, 2) == doctest::Approx(51.0 / 255.0));
  }
}

TEST_SUITE("rng") {
  TEST_CASE("splitmix64 reference values") {
    // First outputs for seed 0 from the reference implementation.
    SplitMix64 rng(0);
    CHECK(rng.next() == 0xE220A8397B1DCDAFULL);
    CHECK(rng.next() == 0x6E789E6AA1B965F4ULL);
    CHECK(rng.next() == 0x06C45D188009454FULL);
  }

  TEST_CASE("uniform and normal moments") {
    SplitMix64 rng(99);
    double su = 0, sn = 0, sn2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      su += u;
      const double z = rng.normal();
      sn += z;
      sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.02));
    CHECK(std::abs(sn / n) < 0.03);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.05));
  }
}
