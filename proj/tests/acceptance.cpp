// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace editvae;
using editvae::testing::chamfer_oracle;
using editvae::testing::emd_by_permutation;
using editvae::testing::gradcheck;
using editvae::testing::random_points;
using editvae::testing::row_matrix;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------

void geometry_suite(Outcome& out) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> alpha(0.1, 1.5), taper(-0.9, 0.9);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_f = 0.0, worst_h = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double grid[5] = {0.1, 0.55, 1.0, 1.45, 1.9};
      const Eigen::Vector2d eps(grid[i], grid[j]);
      const Eigen::Vector3d a(alpha(rng), alpha(rng), alpha(rng));
      const SuperquadricParams flat{a, eps, {0, 0}};
      const SuperquadricParams tapered{a, eps, {taper(rng), taper(rng)}};
      const PointCloud s = sample_superquadric(flat, 256, SamplingScheme::random, std::uint64_t(5 * i + j));
      for (Index r = 0; r < s.size(); ++r) worst_f = std::max(worst_f, std::abs(inside_outside(flat, s.point(r)) - 1.0));
      // Tapered surfaces: the indicator untapers before evaluating F.
      const PointCloud t = sample_superquadric(tapered, 256, SamplingScheme::grid, 0);
      for (Index r = 0; r < t.size(); ++r)
        worst_h = std::max(worst_h, std::abs(smoothed_indicator(tapered, Pose{}, t.point(r)) - 1.0));
    }
  }
  double worst_pose = 0.0, worst_rot = 0.0;
  const PointCloud x(random_points(2, 200, 2.0));
  for (int trial = 0; trial < 100; ++trial) {
    const Pose pose =
        Pose::normalized({normal(rng), normal(rng), normal(rng), normal(rng)}, {normal(rng), normal(rng), normal(rng)});
    const PointCloud back =
        apply_pose(pose, apply_pose(pose, x, PoseDirection::forward), PoseDirection::inverse);
    worst_pose = std::max(worst_pose, (back.points() - x.points()).cwiseAbs().maxCoeff());
    const Eigen::Matrix3d r = quaternion_to_rotation(pose.q);
    worst_rot = std::max({worst_rot, (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(),
                          std::abs(r.determinant() - 1.0)});
  }
  out.require(worst_f <= 1e-6, "inside-outside on surface");
  out.require(worst_h <= 1e-6, "indicator on tapered surface");
  out.require(worst_pose <= 1e-9, "pose round trip");
  out.require(worst_rot <= 1e-9, "rotation orthogonality");
  out.detail << "max|F-1| " << fmt(worst_f) << ", max|H-1| tapered " << fmt(worst_h) << ", pose round trip "
             << fmt(worst_pose) << ", R^T R " << fmt(worst_rot);
}

// ---------------------------------------------------------------------------

void gradient_suite(Outcome& out) {
  Matrix (*pack)(const std::array<double, 7>&) = [](const std::array<double, 7>& a) -> Matrix {
    return Eigen::Map<const Matrix>(a.data(), 1, 7);
  };
  std::vector<std::pair<std::string, double>> errors;

  errors.emplace_back("chamfer", gradcheck([](const std::vector<ad::Var>& v) { return chamfer(v[0], v[1]); },
                                           {random_points(1, 64), random_points(2, 48)})
                                     .worst);

  const auto a0 = sample_angles(32, SamplingScheme::random, 1), a1 = sample_angles(32, SamplingScheme::random, 2);
  const Matrix p0 = pack(SuperquadricParams{{0.6, 0.5, 0.4}, {0.7, 1.2}, {0.2, -0.1}}.packed());
  const Matrix p1 = pack(SuperquadricParams{{0.4, 0.6, 0.5}, {1.3, 0.6}, {-0.3, 0.1}}.packed());
  const Matrix t0 = pack(Pose::normalized({0.9, 0.1, -0.2, 0.3}, {-0.4, 0, 0.1}).packed());
  const Matrix t1 = pack(Pose::normalized({0.8, -0.3, 0.2, 0.1}, {0.4, 0.1, 0}).packed());
  const Matrix x = random_points(3, 64, 1.1);
  std::vector<Matrix> surfaces;
  {
    ad::NoGradGuard g;
    surfaces.push_back(posed_surface(ad::Var::constant(p0), ad::Var::constant(t0), a0).value());
    surfaces.push_back(posed_surface(ad::Var::constant(p1), ad::Var::constant(t1), a1).value());
  }
  const auto assignment = assign_points_to_parts(x, surfaces);
  auto parts_of = [&](const std::vector<ad::Var>& v) {
    return std::vector<PartTape>{{v.size() > 4 ? v[4] : ad::Var(), v[1], v[0], posed_surface(v[0], v[1], a0)},
                                 {v.size() > 5 ? v[5] : ad::Var(), v[3], v[2], posed_surface(v[2], v[3], a1)}};
  };
  errors.emplace_back("parts_point_loss",
                      gradcheck([&](const std::vector<ad::Var>& v) { return parts_point_loss(parts_of(v), x, assignment); },
                                {p0, t0, p1, t1, random_points(4, 32, 0.6), random_points(5, 32, 0.6)})
                          .worst);
  errors.emplace_back(
      "primitive_distance_loss",
      gradcheck([&](const std::vector<ad::Var>& v) { return primitive_distance_loss(parts_of(v), x, assignment); },
                {p0, t0, p1, t1})
          .worst);
  errors.emplace_back("overlap_loss",
                      gradcheck([&](const std::vector<ad::Var>& v) { return overlap_loss(parts_of(v)); },
                                {p0, t0, p1, t1})
                          .worst);
  std::mt19937_64 rng(6);
  errors.emplace_back("kl_divergence",
                      gradcheck([](const std::vector<ad::Var>& v) { return ad::sum(kl_divergence(v[0], v[1])); },
                                {standard_normal(rng, 2, 16), standard_normal(rng, 2, 16)})
                          .worst);

  Model model(editvae::testing::small_config(), 7);
  const PointCloud cloud(random_points(8, 64));
  const PosteriorParams post = encoder_forward(model, cloud);
  LossWeights w;
  w.omega_o = 0.1;
  w.beta = 0.5;
  const auto [total_err, total_where] = editvae::testing::total_loss_gradcheck(model, cloud, post, w, 9, 6);
  errors.emplace_back("total_loss", total_err);

  for (const auto& [name, err] : errors) {
    out.require(err < 1e-3, name);
    out.detail << name << " " << fmt(err) << "; ";
  }
  out.detail << "(total_loss worst tensor: " << total_where << ")";
}

// ---------------------------------------------------------------------------

bool same_part(const DecodedPart& a, const DecodedPart& b) {
  return a.canonical_points == b.canonical_points && a.world_points == b.world_points &&
         a.pose.packed() == b.pose.packed() && a.primitive.packed() == b.primitive.packed();
}

void disentanglement_suite(Outcome& out) {
  int violations = 0, checks = 0;
  double worst_split = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig cfg = editvae::testing::small_config(3 + int(seed % 2));
    cfg.latent_dim = 32;
    const Model model(cfg, seed);
    std::mt19937_64 rng(seed);
    const Vector z1 = sample_prior(seed * 2 + 1, 1, cfg.latent_dim).front();
    const Vector z2 = sample_prior(seed * 2 + 2, 1, cfg.latent_dim).front();
    const LatentBundle b1 = split(model, z1), b2 = split(model, z2);
    const DecodedShape base = decode_bundle(model, b1);
    const int selected = int(rng() % std::uint64_t(cfg.parts));
    const EditSelection sel{{selected}};
    const DecodedShape mixed = mix_parts(model, b1, b2, sel);
    const DecodedShape resampled = resample_parts(model, b1, EditSelection{{selected}, EditMode::resample}, seed);
    for (int m = 0; m < cfg.parts; ++m) {
      const auto& before = base.parts[std::size_t(m)];
      for (const DecodedShape* edited : {&mixed, &resampled}) {
        const auto& after = edited->parts[std::size_t(m)];
        ++checks;
        const bool pose_fixed =
            after.pose.packed() == before.pose.packed() && after.primitive.packed() == before.primitive.packed();
        if (!pose_fixed || (m != selected && !same_part(after, before))) ++violations;
      }
    }
    // split_latent commutes with convex combinations.
    for (double w : {0.0, 0.3, 0.5, 0.9, 1.0}) {
      const LatentBundle c = split(model, Vector((1.0 - w) * z1 + w * z2));
      for (int m = 0; m < cfg.parts; ++m) {
        const auto& p = c.parts[std::size_t(m)];
        const auto& q1 = b1.parts[std::size_t(m)];
        const auto& q2 = b2.parts[std::size_t(m)];
        worst_split = std::max({worst_split, (p.style - ((1 - w) * q1.style + w * q2.style)).cwiseAbs().maxCoeff(),
                                (p.pose - ((1 - w) * q1.pose + w * q2.pose)).cwiseAbs().maxCoeff(),
                                (p.primitive - ((1 - w) * q1.primitive + w * q2.primitive)).cwiseAbs().maxCoeff()});
      }
    }
  }
  out.require(violations == 0, "locality / pose fixity");
  out.require(worst_split <= 1e-6, "split commutes with convex combinations");
  out.detail << "20 seeds, " << checks << " part checks, " << violations << " violations; split deviation "
             << fmt(worst_split);
}

// ---------------------------------------------------------------------------

std::vector<Matrix> random_sets(std::uint64_t seed, int count, Index n) {
  std::vector<Matrix> out;
  for (int i = 0; i < count; ++i) out.push_back(random_points(seed * 97 + std::uint64_t(i), n, 0.9));
  return out;
}

void metric_suite(Outcome& out) {
  const auto gen = random_sets(1, 5, 6), ref = random_sets(2, 5, 6);
  double worst = 0.0;
  for (SetDistance d : {SetDistance::cd, SetDistance::emd}) {
    auto dist = [&](const Matrix& a, const Matrix& b) {
      return d == SetDistance::cd ? chamfer_oracle(a, b) : emd_by_permutation(a, b);
    };
    double mmd_oracle = 0.0;
    for (const auto& r : ref) {
      double best = 1e300;
      for (const auto& g : gen) best = std::min(best, dist(g, r));
      mmd_oracle += best / double(ref.size());
    }
    std::set<std::size_t> hit;
    for (const auto& g : gen) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < ref.size(); ++j)
        if (dist(g, ref[j]) < dist(g, ref[arg])) arg = j;
      hit.insert(arg);
    }
    worst = std::max(worst, std::abs(mmd(gen, ref, d) - mmd_oracle));
    worst = std::max(worst, std::abs(coverage(gen, ref, d) - 100.0 * double(hit.size()) / double(ref.size())));
  }
  double mcd_oracle = 0.0;
  for (const auto& p : gen) {
    double best = 1e300;
    for (const auto& g : ref) best = std::min(best, chamfer_oracle(p, g));
    mcd_oracle += best / double(gen.size());
  }
  worst = std::max(worst, std::abs(mcd(gen, ref) - mcd_oracle));
  out.require(worst <= 1e-12, "mmd/coverage/mcd brute force");

  double worst_rel = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_points(100 + trial, 16), y = random_points(200 + trial, 16);
    const double exact = emd_exact(x, y);
    worst_rel = std::max(worst_rel, std::abs(emd_entropic(x, y) - exact) / exact);
  }
  out.require(worst_rel <= 0.05, "entropic emd within 5%");

  // JSD closed forms, with the histogram's 1e-12 smoothing reproduced in the oracle.
  auto closed = [](const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double m = 0.5 * (p[i] + q[i]);
      if (p[i] > 0) s += 0.5 * p[i] * std::log(p[i] / m);
      if (q[i] > 0) s += 0.5 * q[i] * std::log(q[i] / m);
    }
    return s;
  };
  auto smoothed = [](std::vector<double> counts) {
    const double cells = 28.0 * 28.0 * 28.0;
    double total = 0.0;
    for (double c : counts) total += c;
    for (double& c : counts) c = (c + 1e-12) / (total + 1e-12 * cells);
    const double empty = 1e-12 / (total + 1e-12 * cells);
    return std::pair{counts, empty};
  };
  auto jsd_oracle = [&](const std::vector<double>& pc, const std::vector<double>& qc) {
    const auto [p, pe] = smoothed(pc);
    const auto [q, qe] = smoothed(qc);
    const double rest = 28.0 * 28.0 * 28.0 - double(pc.size());
    return closed(p, q) + rest * closed({pe}, {qe});
  };
  const auto same = random_sets(3, 3, 40);
  const double j0 = jsd(same, same);
  const double j1 = jsd(std::vector<Matrix>{row_matrix({-0.99, -0.99, -0.99})},
                        std::vector<Matrix>{row_matrix({0.99, 0.99, 0.99})});
  Matrix two(2, 3);
  two << -0.5, 0, 0, 0.5, 0, 0;
  const double j2 = jsd(std::vector<Matrix>{row_matrix({-0.5, 0, 0})}, std::vector<Matrix>{two});
  const double e1 = std::abs(j1 - jsd_oracle({1, 0}, {0, 1}));
  const double e2 = std::abs(j2 - jsd_oracle({1, 0}, {1, 1}));
  out.require(std::abs(j0) <= 1e-9 && e1 <= 1e-9 && e2 <= 1e-9, "jsd closed forms");
  out.detail << "brute-force deviation " << fmt(worst) << ", entropic emd rel err " << fmt(worst_rel)
             << ", jsd " << fmt(j0) << " / " << fmt(j1) << " (ln2) / " << fmt(j2) << " (0.21576)";
}

// ---------------------------------------------------------------------------
// Toy training.

constexpr int kToyClouds = 200;
constexpr int kToyPoints = 256;
constexpr int kHeldOut = 64;
constexpr int kGenerated = 64;

TrainConfig toy_config(bool global_map) {
  TrainConfig cfg;
  cfg.model.parts = 3;
  cfg.model.use_global_map = global_map;
  cfg.model.latent_dim = global_map ? 64 : 3 * cfg.model.part_dims.total();
  cfg.model.encoder_widths = {64, 128, 256};
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.learning_rate = 2e-3;
  cfg.points_per_cloud = kToyPoints;
  cfg.weights.beta = 0.005;
  cfg.seed = 1;
  return cfg;
}

struct ToyRun {
  TrainResult result;
  double mmd_cd = 0.0;
  double seconds = 0.0;
  bool finite = true;
};

std::vector<Matrix> points_of(const std::vector<LabeledCloud>& clouds) {
  std::vector<Matrix> out;
  for (const auto& c : clouds) out.push_back(c.cloud.points());
  return out;
}

ToyRun run_toy(bool global_map, const std::vector<PointCloud>& data, const std::vector<Matrix>& held_out) {
  const auto t0 = std::chrono::steady_clock::now();
  ToyRun run{train(data, toy_config(global_map)), 0.0, 0.0, true};
  std::vector<Matrix> gen;
  for (const auto& s : generate(run.result.model, 12345, kGenerated)) {
    gen.push_back(s.points());
    run.finite = run.finite && gen.back().allFinite();
  }
  for (const auto& r : run.result.log) run.finite = run.finite && std::isfinite(r.loss.total);
  if (run.finite) run.mmd_cd = mmd(gen, held_out, SetDistance::cd);
  run.seconds = seconds_since(t0);
  return run;
}

struct ToyFixture {
  std::vector<LabeledCloud> train;
  std::vector<LabeledCloud> held_out;
  std::vector<PointCloud> train_clouds;
  std::vector<Matrix> held_points;
  std::optional<ToyRun> with_map;
};

ToyFixture& toy_fixture() {
  static ToyFixture f = [] {
    ToyFixture t;
    t.train = synth_toyshapes(ToyCategory::chair, kToyClouds, kToyPoints, 1);
    t.held_out = synth_toyshapes(ToyCategory::chair, kHeldOut, kToyPoints, 999);
    for (const auto& c : t.train) t.train_clouds.push_back(c.cloud);
    t.held_points = points_of(t.held_out);
    return t;
  }();
  return f;
}

// The constant baseline emits the training medoid under Chamfer distance,
// drawn at the same point count as a generated shape.
double constant_baseline_mmd(const ToyFixture& f, Index generated_points) {
  const auto train_points = points_of(f.train);
  std::size_t medoid = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < train_points.size(); ++i) {
    double total = 0.0;
    for (const auto& other : train_points) total += chamfer(train_points[i], other);
    if (total < best) best = total, medoid = i;
  }
  // Same seed and index give the same shape; only the surface sampling density changes.
  const auto dense = synth_toyshapes(ToyCategory::chair, int(medoid) + 1, int(generated_points), 1);
  const std::vector<Matrix> constant{dense[medoid].cloud.points()};
  return mmd(constant, f.held_points, SetDistance::cd);
}

void toy_training_suite(Outcome& out) {
  ToyFixture& f = toy_fixture();
  f.with_map = run_toy(true, f.train_clouds, f.held_points);
  const ToyRun& run = *f.with_map;
  const auto& log = run.result.log;
  out.require(run.finite, "finite losses and samples");
  const double first = log.front().loss.total, last = log.back().loss.total;
  out.require(last < 0.5 * first, "final loss < 0.5x first epoch");

  const Index generated_points = Index(run.result.model.config().parts) * run.result.model.config().points_per_part();
  const double baseline = constant_baseline_mmd(f, generated_points);
  const double sparse_baseline = constant_baseline_mmd(f, kToyPoints);
  out.require(run.mmd_cd <= 0.7 * baseline, "MMD-CD <= 0.7x constant baseline");

  double learned = 0.0, random = 0.0;
  std::mt19937_64 rng(77);
  for (const auto& c : f.held_out) {
    const auto gt = split_by_label(c);
    const auto labels = segment_parts(run.result.model, c.cloud);
    learned += mcd(group_rows(c.cloud.points(), labels, 3), gt);
    std::vector<int> shuffled(c.labels.size());
    for (auto& l : shuffled) l = int(rng() % 3);
    random += mcd(group_rows(c.cloud.points(), shuffled, 3), gt);
  }
  learned /= double(f.held_out.size());
  random /= double(f.held_out.size());
  out.require(learned <= 0.5 * random, "MCD <= 0.5x random partition");
  out.require(run.seconds < 20 * 60, "runtime < 20 min");
  out.detail << "loss " << fmt(first) << " -> " << fmt(last) << " (x" << fmt(last / first) << "); MMD-CD "
             << fmt(run.mmd_cd) << " vs baseline " << fmt(baseline) << " at " << generated_points << " points (x"
             << fmt(run.mmd_cd / baseline) << "; x" << fmt(run.mmd_cd / sparse_baseline) << " vs the baseline at "
             << kToyPoints << " points); MCD " << fmt(learned) << " vs random " << fmt(random) << " (x" << fmt(learned / random)
             << "); train+sample " << fmt(run.seconds) << " s";
}

void ablation_suite(Outcome& out) {
  ToyFixture& f = toy_fixture();
  if (!f.with_map) f.with_map = run_toy(true, f.train_clouds, f.held_points);
  const ToyRun without = run_toy(false, f.train_clouds, f.held_points);
  out.require(f.with_map->finite && without.finite, "finite results");
  out.require(std::isfinite(without.mmd_cd) && std::isfinite(f.with_map->mmd_cd), "finite MMD");
  out.detail << "MMD-CD with map " << fmt(f.with_map->mmd_cd) << ", without map " << fmt(without.mmd_cd)
             << (without.mmd_cd >= f.with_map->mmd_cd ? " (map better or equal)" : " (map worse)") << "; "
             << fmt(without.seconds) << " s";
}

// ---------------------------------------------------------------------------

void persistence_api_suite(Outcome& out) {
  ToyFixture& f = toy_fixture();
  Model model = f.with_map ? f.with_map->result.model : Model(toy_config(true).model, 3);
  const TrainConfig cfg = toy_config(true);
  editvae::testing::TempDir dir("acceptance");
  const auto path = dir.path / "toy.evck";
  save_checkpoint(path, model, f.with_map ? &f.with_map->result.optimizer : nullptr, cfg, "toychair");
  const Checkpoint loaded = load_checkpoint(path);
  bool identical = true;
  for (const auto& z : sample_prior(5, 8, cfg.model.latent_dim))
    identical = identical && decode_shape(loaded.model, z).points() == decode_shape(model, z).points();
  identical = identical && encoder_forward(loaded.model, f.train_clouds[0]).mu ==
                               encoder_forward(model, f.train_clouds[0]).mu;
  out.require(identical, "checkpoint round trip bit-exact");
  std::string bytes = data::read_file(path);
  bytes.resize(bytes.size() - 7);
  bool truncated_detected = false;
  try {
    decode_checkpoint(bytes);
  } catch (const ChecksumError&) {
    truncated_detected = true;
  }
  out.require(truncated_detected, "truncated checkpoint rejected");

  ApiService api(load_checkpoint(path));
  auto post = [&](const std::string& route, const json& body) { return api.handle("POST", route, body.dump()); };
  const json sampled = json::parse(post("/sample", {{"seed", 3}, {"n", 2}}).body);
  const auto ids = sampled["bundle_ids"];
  const json mixed =
      json::parse(post("/mix", {{"target_id", ids[0]}, {"reference_id", ids[1]}, {"parts", json::array()}}).body);
  out.require(mixed["points"].dump() == sampled["shapes"][0]["points"].dump(), "/mix [] byte-identical");

  std::set<int> statuses;
  auto expect = [&](const ApiResponse& r, int status) {
    statuses.insert(r.status);
    const json j = json::parse(r.body, nullptr, false);
    out.require(r.status == status && j.is_object() && j.contains("error") && j.contains("detail"),
                "status " + std::to_string(status));
  };
  expect(post("/sample", {{"seed", 1}}), 400);
  expect(api.handle("POST", "/mix", "{oops"), 400);
  expect(post("/mix", {{"target_id", "missing"}, {"reference_id", ids[1]}, {"parts", {0}}}), 404);
  expect(api.handle("GET", "/unknown", ""), 404);
  expect(post("/mix", {{"target_id", ids[0]}, {"reference_id", ids[1]}, {"parts", {9}}}), 422);
  expect(post("/resample", {{"bundle_id", ids[0]}, {"parts", {0, 0}}, {"seed", 1}}), 422);
  expect(post("/interpolate", {{"id_a", ids[0]}, {"id_b", ids[1]}, {"weights", {-0.5}}}), 422);
  expect(api.handle("POST", "/encode", R"({"points": [[1e308, -1e308, 1e308], [-1e308, 1e308, 1e308]]})"), 500);
  out.detail << "round trip " << (identical ? "bit-exact" : "differs") << ", /mix [] "
             << (mixed["points"].dump() == sampled["shapes"][0]["points"].dump() ? "identical" : "differs")
             << ", error statuses seen:";
  for (int s : statuses) out.detail << ' ' << s;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_seconds;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria{
      {"geometry", 10, geometry_suite},
      {"gradients", 120, gradient_suite},
      {"disentanglement", 60, disentanglement_suite},
      {"metric oracles", 60, metric_suite},
      {"toy training", 20 * 60, toy_training_suite},
      {"ablation without global map", 20 * 60, ablation_suite},
      {"persistence and API", 120, persistence_api_suite},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "[exception: " << e.what() << "]";
    }
    const double secs = seconds_since(t0);
    if (secs >= c.limit_seconds) {
      out.pass = false;
      out.detail << " [over time limit " << c.limit_seconds << " s]";
    }
    std::printf("%s %-28s %7.1fs  %s\n", out.pass ? "PASS" : "FAIL", c.name, secs, out.detail.str().c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
