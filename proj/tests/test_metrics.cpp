#include "support.hpp"

#include <gtest/gtest.h>

using namespace editvae;
using editvae::testing::chamfer_oracle;
using editvae::testing::emd_by_permutation;
using editvae::testing::random_points;
using editvae::testing::row_matrix;

namespace {

std::vector<Matrix> cloud_set(std::uint64_t seed, int count, Index n) {
  std::vector<Matrix> out;
  for (int i = 0; i < count; ++i) out.push_back(random_points(seed * 100 + std::uint64_t(i), n, 0.9));
  return out;
}

Matrix permuted(const Matrix& m, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix out(m.rows(), 3);
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(idx[std::size_t(i)]);
  return out;
}

double closed_form_jsd(const std::vector<double>& p, const std::vector<double>& q) {
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) out += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) out += 0.5 * q[i] * std::log(q[i] / m);
  }
  return out;
}

}  // namespace

// The closed form over a full 28^3 support with the same 1e-12 per-cell smoothing.
double smoothed_jsd(const std::map<Index, double>& p_counts, const std::map<Index, double>& q_counts) {
  const Index cells = 28 * 28 * 28;
  auto dist = [&](const std::map<Index, double>& counts) {
    double total = 0.0;
    for (const auto& [k, v] : counts) total += v;
    std::vector<double> d(static_cast<std::size_t>(cells), 1e-12 / (total + 1e-12 * double(cells)));
    for (const auto& [k, v] : counts) d[std::size_t(k)] = (v + 1e-12) / (total + 1e-12 * double(cells));
    return d;
  };
  return closed_form_jsd(dist(p_counts), dist(q_counts));
}

Index voxel(int i, int j, int k) { return (Index(i) * 28 + j) * 28 + k; }

TEST(Jsd, ClosedFormCases) {
  const auto a = cloud_set(1, 3, 50);
  EXPECT_NEAR(jsd(a, a), 0.0, 1e-12);

  // Point masses in disjoint voxels.
  const std::vector<Matrix> p{row_matrix({-0.99, -0.99, -0.99})}, q{row_matrix({0.99, 0.99, 0.99})};
  EXPECT_NEAR(jsd(p, q), smoothed_jsd({{voxel(0, 0, 0), 1}}, {{voxel(27, 27, 27), 1}}), 1e-12);
  EXPECT_NEAR(jsd(p, q), std::numbers::ln2, 1e-7);

  // Two occupied voxels: p = (1, 0), q = (1/2, 1/2).
  const std::vector<Matrix> pv{row_matrix({-0.5, 0, 0})};
  Matrix two(2, 3);
  two << -0.5, 0, 0, 0.5, 0, 0;
  const std::vector<Matrix> qv{two};
  const double exact = closed_form_jsd({1.0, 0.0}, {0.5, 0.5});
  EXPECT_NEAR(exact, 0.21576, 1e-5);
  const double smoothed = smoothed_jsd({{voxel(7, 14, 14), 1}}, {{voxel(7, 14, 14), 1}, {voxel(21, 14, 14), 1}});
  EXPECT_NEAR(jsd(pv, qv), smoothed, 1e-12);
  EXPECT_NEAR(jsd(pv, qv), exact, 1e-7);
}

TEST(Jsd, SymmetricAndBounded) {
  const auto a = cloud_set(2, 4, 40), b = cloud_set(3, 5, 40);
  EXPECT_NEAR(jsd(a, b), jsd(b, a), 1e-12);
  EXPECT_GE(jsd(a, b), 0.0);
  EXPECT_LE(jsd(a, b), std::numbers::ln2);
  EXPECT_THROW(jsd({}, b), DomainError);
}

TEST(Emd, Examples) {
  const Matrix x = random_points(4, 20);
  EXPECT_NEAR(emd(x, x).value, 0.0, 1e-12);
  EXPECT_NEAR(emd(x, permuted(x, 1)).value, 0.0, 1e-12);
  EXPECT_NEAR(emd(row_matrix({0, 0, 0}), row_matrix({3, 4, 0})).value, 5.0, 1e-12);
  EXPECT_THROW(emd(x, random_points(5, 19)), DimensionError);
}

TEST(Emd, HungarianMatchesExhaustiveSearch) {
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_points(10 + trial, 7), y = random_points(30 + trial, 7);
    const EmdResult r = emd(x, y);
    EXPECT_FALSE(r.approximate);
    EXPECT_NEAR(r.value, emd_by_permutation(x, y), 1e-12);
  }
}

TEST(Emd, AssignmentOnRectangularAndDegenerateCosts) {
  Matrix cost(3, 3);
  cost << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto a = metrics::min_cost_assignment(cost);
  double total = 0.0;
  for (Index i = 0; i < 3; ++i) total += cost(i, a[std::size_t(i)]);
  EXPECT_EQ(total, 5.0);
  const auto z = metrics::min_cost_assignment(Matrix::Zero(4, 4));
  std::set<int> used(z.begin(), z.end());
  EXPECT_EQ(used.size(), 4u);
}

TEST(Emd, EntropicWithinFivePercentOfExact) {
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = random_points(50 + trial, 16), y = random_points(70 + trial, 16);
    const double exact = emd_exact(x, y);
    EXPECT_NEAR(emd_entropic(x, y), exact, 0.05 * exact) << trial;
  }
  const Matrix big_x = random_points(90, 600), big_y = random_points(91, 600);
  EXPECT_TRUE(emd(big_x, big_y).approximate);
}

TEST(Emd, MetricSpotChecks) {
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = random_points(100 + trial, 12), b = random_points(200 + trial, 12),
                 c = random_points(300 + trial, 12);
    EXPECT_NEAR(emd(a, b).value, emd(b, a).value, 1e-12);
    EXPECT_LE(emd(a, c).value, emd(a, b).value + emd(b, c).value + 1e-12);
  }
}

TEST(Mmd, ExamplesAndBruteForce) {
  const auto ref = cloud_set(5, 4, 6);
  EXPECT_NEAR(mmd(ref, ref, SetDistance::cd), 0.0, 1e-15);
  EXPECT_NEAR(mmd(ref, ref, SetDistance::emd), 0.0, 1e-12);
  const std::vector<Matrix> one{ref[0]}, two{ref[0], ref[1]};
  EXPECT_NEAR(mmd(one, two, SetDistance::cd), 0.5 * chamfer_oracle(ref[1], ref[0]), 1e-14);

  const auto gen = cloud_set(6, 4, 6);
  for (SetDistance d : {SetDistance::cd, SetDistance::emd}) {
    double oracle = 0.0;
    for (const auto& r : ref) {
      double best = 1e300;
      for (const auto& g : gen)
        best = std::min(best, d == SetDistance::cd ? chamfer_oracle(g, r) : emd_by_permutation(g, r));
      oracle += best;
    }
    EXPECT_NEAR(mmd(gen, ref, d), oracle / 4.0, 1e-12);
  }
  EXPECT_THROW(mmd({}, ref, SetDistance::cd), DomainError);
}

TEST(Coverage, ExamplesAndBruteForce) {
  const auto ref = cloud_set(7, 5, 6);
  EXPECT_EQ(coverage(ref, ref, SetDistance::cd), 100.0);
  const std::vector<Matrix> one{ref[0]}, two{ref[0], ref[1]};
  EXPECT_EQ(coverage(one, two, SetDistance::cd), 50.0);

  std::vector<Matrix> superset = ref;
  superset.push_back(random_points(8, 6));
  superset.push_back(ref[2]);
  EXPECT_EQ(coverage(superset, ref, SetDistance::emd), 100.0);

  const auto gen = cloud_set(9, 5, 6);
  for (SetDistance d : {SetDistance::cd, SetDistance::emd}) {
    std::set<std::size_t> matched;
    for (const auto& g : gen) {
      std::size_t arg = 0;
      double best = 1e300;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        const double v = d == SetDistance::cd ? chamfer_oracle(g, ref[j]) : emd_by_permutation(g, ref[j]);
        if (v < best) best = v, arg = j;
      }
      matched.insert(arg);
    }
    EXPECT_EQ(coverage(gen, ref, d), 100.0 * double(matched.size()) / 5.0);
  }
}

TEST(Mcd, ExamplesAndBruteForce) {
  const auto gt = cloud_set(10, 3, 15);
  EXPECT_EQ(mcd(gt, gt), 0.0);
  const std::vector<Matrix> one{random_points(11, 10)};
  const std::vector<Matrix> two{gt[0], gt[1]};
  EXPECT_NEAR(mcd(one, two), std::min(chamfer_oracle(one[0], gt[0]), chamfer_oracle(one[0], gt[1])), 1e-14);

  const auto parts = cloud_set(12, 3, 15);
  double oracle = 0.0;
  for (const auto& p : parts) {
    double best = 1e300;
    for (const auto& g : gt) best = std::min(best, chamfer_oracle(p, g));
    oracle += best;
  }
  EXPECT_NEAR(mcd(parts, gt), oracle / 3.0, 1e-13);
}

TEST(Metrics, InvariantToPointOrder) {
  const auto gen = cloud_set(13, 3, 10), ref = cloud_set(14, 3, 10);
  std::vector<Matrix> gen_p, ref_p;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    gen_p.push_back(permuted(gen[i], i));
    ref_p.push_back(permuted(ref[i], 10 + i));
  }
  const MetricReport a = evaluate(gen, ref), b = evaluate(gen_p, ref_p);
  EXPECT_NEAR(a.jsd, b.jsd, 1e-12);
  EXPECT_NEAR(a.mmd_cd, b.mmd_cd, 1e-12);
  EXPECT_NEAR(a.mmd_emd, b.mmd_emd, 1e-12);
  EXPECT_EQ(a.cov_cd, b.cov_cd);
  EXPECT_EQ(a.cov_emd, b.cov_emd);
  EXPECT_NEAR(mcd(gen, ref), mcd(gen_p, ref_p), 1e-12);
}

TEST(Metrics, EvaluateHonoursSelection) {
  const auto gen = cloud_set(15, 2, 8), ref = cloud_set(16, 2, 8);
  MetricSelection only_jsd{true, false, false, false, false};
  const MetricReport r = evaluate(gen, ref, only_jsd);
  EXPECT_GT(r.jsd, 0.0);
  EXPECT_EQ(r.mmd_cd, 0.0);
  EXPECT_EQ(r.mmd_emd, 0.0);
  const MetricReport self = evaluate(ref, ref);
  EXPECT_NEAR(self.jsd, 0.0, 1e-12);
  EXPECT_EQ(self.cov_cd, 100.0);
  EXPECT_EQ(self.cov_emd, 100.0);
}
