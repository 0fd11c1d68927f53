#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "milgrad/influence.hpp"
#include "milgrad/synth.hpp"
#include "milgrad/train.hpp"
#include "oracles.hpp"

using namespace milgrad;

namespace {

ModelConfig tiny_model() {
  return ModelConfig{.feature_dim = 6, .encoder_hidden = 0, .embed_dim = 6, .attention_dim = 4,
                     .head_hidden = 5};
}

struct TinyRun {
  SynthDataset dataset;
  TrainResult result;
  RunArchive archive;
};

TinyRun make_tiny_run(std::uint64_t seed, int epochs = 4, int cadence = 1) {
  SynthConfig sc;
  sc.bag_count = 24;
  sc.instances_per_bag = 4;
  sc.feature_dim = 6;
  sc.signal_instances = 2;
  sc.signal_marker = 4.0;
  sc.severity_scale = 0.8;
  sc.split_fractions = {0.75, 0.25, 0.0};
  sc.seed = seed;
  TinyRun run{generate(sc), {}, {}};
  TrainConfig tc;
  tc.epochs = epochs;
  tc.checkpoint_cadence = cadence;
  tc.seed = seed;
  run.result = train(tc, tiny_model(), run.dataset.split_bags(Split::kTrain),
                     run.dataset.split_bags(Split::kVal), "fp", "cfg");
  run.archive = RunArchive::from_parts(run.result.manifest, run.result.checkpoints);
  return run;
}

}  // namespace

TEST_CASE("variant kernel matches the hand-evaluated scalar formulas") {
  const double eta = 0.3, eps = 1e-8;
  Vector m(1), v(1), gt(1), gc(1);
  m << 0.25;
  v << 0.04;
  gt << 1.7;
  gc << -0.6;
  const double pre = 0.25 / (std::sqrt(0.04) + eps);

  CHECK(std::abs(variant_checkpoint_term(InfluenceVariant::kLiteral, eta, m, v, eps, gt, gc) -
                 eta * pre * 1.7 * (-0.6)) <= 1e-15);
  CHECK(std::abs(variant_checkpoint_term(InfluenceVariant::kUpdateDot, eta, m, v, eps, gt, gc) -
                 eta * 1.7 * pre) <= 1e-15);
  CHECK(std::abs(
            variant_checkpoint_term(InfluenceVariant::kPreconditionedIp, eta, m, v, eps, gt, gc) -
            eta * 1.7 * (-0.6) / (std::sqrt(0.04) + eps)) <= 1e-15);
}

TEST_CASE("variant kernel: zero candidate gradient zeroes literal and preconditioned scores") {
  Rng rng(5);
  Vector m(8), v(8), gt(8);
  for (Index i = 0; i < 8; ++i) {
    m(i) = rng.normal();
    v(i) = std::abs(rng.normal());
    gt(i) = rng.normal();
  }
  const Vector zero = Vector::Zero(8);
  CHECK(variant_checkpoint_term(InfluenceVariant::kLiteral, 0.5, m, v, 1e-8, gt, zero) == 0.0);
  CHECK(variant_checkpoint_term(InfluenceVariant::kPreconditionedIp, 0.5, m, v, 1e-8, gt, zero) ==
        0.0);
}

TEST_CASE("variant kernel bilinearity: scaling the target gradient scales the term") {
  Rng rng(6);
  Vector m(10), v(10), gt(10), gc(10);
  for (Index i = 0; i < 10; ++i) {
    m(i) = rng.normal();
    v(i) = std::abs(rng.normal());
    gt(i) = rng.normal();
    gc(i) = rng.normal();
  }
  for (const auto variant : {InfluenceVariant::kLiteral, InfluenceVariant::kUpdateDot,
                             InfluenceVariant::kPreconditionedIp}) {
    const double base = variant_checkpoint_term(variant, 0.7, m, v, 1e-8, gt, gc);
    const double scaled = variant_checkpoint_term(variant, 0.7, m, v, 1e-8, (2.5 * gt).eval(), gc);
    CHECK(std::abs(scaled - 2.5 * base) <= 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST_CASE("an archive without trained checkpoints scores zero with zero count") {
  TrainConfig tc;
  RunManifest manifest;
  manifest.model = tiny_model();
  manifest.train = tc;
  CheckpointRecord init;
  init.index = 0;
  init.step = 0;
  const Index p = 6 * 6 + 6 + 6 * 4 + 4 + 6 * 5 + 5 + 5 * 3 + 3;
  init.params = Vector::Zero(p);
  init.m = Vector::Zero(p);
  init.v = Vector::Zero(p);
  manifest.checkpoint_files = {"ckpt_00000.mgck"};
  const RunArchive archive = RunArchive::from_parts(manifest, {init});

  const Bag target = as_singleton_bag(oracles::random_bag(3, 6, 1, kMild), 0);
  const Bag candidate = as_singleton_bag(oracles::random_bag(3, 6, 2, kSevere), 1);
  const auto score =
      tracin_pair(archive, target, candidate, {InfluenceVariant::kLiteral, CheckpointMode::kTracInCp});
  CHECK(score.score == 0.0);
  CHECK(score.checkpoints_used == 0);
  CHECK(score.target == InstanceId{target.id, 0});
  CHECK(score.candidate == InstanceId{candidate.id, 1});
}

TEST_CASE("tracin_pair rejects multi-instance bags") {
  const TinyRun run = make_tiny_run(3);
  const Bag multi = oracles::random_bag(3, 6, 9);
  const Bag single = as_singleton_bag(multi, 0);
  CHECK_THROWS_AS(tracin_pair(run.archive, multi, single, {}), std::runtime_error);
  CHECK_THROWS_AS(tracin_pair(run.archive, single, multi, {}), std::runtime_error);
}

TEST_CASE("tracin_pair composes the kernel over included checkpoints") {
  const TinyRun run = make_tiny_run(4);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const auto val_bags = run.dataset.split_bags(Split::kVal);
  const Bag target = as_singleton_bag(val_bags.at(0), 1);
  const Bag candidate = as_singleton_bag(train_bags.at(2), 0);

  for (const auto variant : {InfluenceVariant::kLiteral, InfluenceVariant::kUpdateDot,
                             InfluenceVariant::kPreconditionedIp}) {
    const InfluenceOptions options{variant, CheckpointMode::kStrict};
    const InfluenceScore score = tracin_pair(run.archive, target, candidate, options);

    double expected = 0.0;
    int used = 0;
    for (const auto& rec : run.archive.checkpoints()) {
      if (rec.step == 0) {
        continue;
      }
      bool included = false;
      for (const auto& entry : rec.membership) {
        for (auto id : entry.bag_ids) {
          included = included || id == candidate.id;
        }
      }
      if (!included) {
        continue;
      }
      const ModelParams params = run.archive.params_at(rec);
      const Vector gt = bag_loss_and_grad(params, target, target.reader1_label).grad.values;
      const Vector gc = bag_loss_and_grad(params, candidate, candidate.reader1_label).grad.values;
      expected += variant_checkpoint_term(variant, rec.eta, rec.m, rec.v,
                                          run.archive.manifest().train.epsilon, gt, gc);
      ++used;
    }
    expected /= run.archive.manifest().train.batch_size;
    CHECK(score.checkpoints_used == used);
    CHECK(score.score == expected);  // same kernel, same order: bit-equal
    CHECK(used > 0);
  }
}

TEST_CASE("strict mode skips candidates outside the membership log") {
  const TinyRun run = make_tiny_run(5);
  const auto val_bags = run.dataset.split_bags(Split::kVal);
  const Bag target = as_singleton_bag(val_bags.at(0), 0);
  Bag outsider = oracles::random_bag(3, 6, 77, kMild);
  outsider.id = 9999;  // never trained on
  const Bag candidate = as_singleton_bag(outsider, 0);

  const auto strict =
      tracin_pair(run.archive, target, candidate, {InfluenceVariant::kLiteral, CheckpointMode::kStrict});
  CHECK(strict.score == 0.0);
  CHECK(strict.checkpoints_used == 0);

  const auto relaxed = tracin_pair(run.archive, target, candidate,
                                   {InfluenceVariant::kLiteral, CheckpointMode::kTracInCp});
  CHECK(relaxed.checkpoints_used ==
        static_cast<int>(run.archive.checkpoints().size()) - 1);
}

TEST_CASE("influence table equals independent pair calls exactly") {
  const TinyRun run = make_tiny_run(6);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const auto val_bags = run.dataset.split_bags(Split::kVal);

  std::vector<Bag> targets;
  for (std::size_t i = 0; i < 3; ++i) {
    targets.push_back(as_singleton_bag(val_bags.at(i), static_cast<Index>(i) % 4));
  }
  std::vector<Bag> candidates;
  for (const Bag& bag : train_bags) {
    for (Index j = 0; j < bag.num_instances(); ++j) {
      candidates.push_back(as_singleton_bag(bag, j));
      if (candidates.size() >= 50) {
        break;
      }
    }
    if (candidates.size() >= 50) {
      break;
    }
  }
  REQUIRE(candidates.size() == 50);

  const InfluenceOptions options{InfluenceVariant::kLiteral, CheckpointMode::kStrict};
  const InfluenceTable table = influence_table(run.archive, targets, candidates, options);
  REQUIRE(table.entries.size() == 150);
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
      const InfluenceScore expect = tracin_pair(run.archive, targets[ti], candidates[ci], options);
      const InfluenceScore& got = table.at(ti, ci);
      CHECK(got.score == expect.score);
      CHECK(got.checkpoints_used == expect.checkpoints_used);
      CHECK(got.target == expect.target);
      CHECK(got.candidate == expect.candidate);
    }
  }
}

TEST_CASE("duplicate candidates receive identical scores") {
  const TinyRun run = make_tiny_run(7);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const auto val_bags = run.dataset.split_bags(Split::kVal);
  const Bag target = as_singleton_bag(val_bags.at(0), 0);
  const Bag candidate = as_singleton_bag(train_bags.at(1), 2);
  const std::vector<Bag> targets{target};
  const std::vector<Bag> candidates{candidate, candidate};
  const InfluenceTable table =
      influence_table(run.archive, targets, candidates, {InfluenceVariant::kLiteral, {}});
  CHECK(table.at(0, 0).score == table.at(0, 1).score);
}

TEST_CASE("preconditioned self-scores are non-negative on the diagonal") {
  const TinyRun run = make_tiny_run(8);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  std::vector<Bag> singletons;
  for (std::size_t i = 0; i < 6; ++i) {
    singletons.push_back(as_singleton_bag(train_bags.at(i), 1));
  }
  const InfluenceTable table =
      influence_table(run.archive, singletons, singletons,
                      {InfluenceVariant::kPreconditionedIp, CheckpointMode::kStrict});
  for (std::size_t i = 0; i < singletons.size(); ++i) {
    CHECK(table.at(i, i).score >= 0.0);
  }
}

TEST_CASE("self-influence matrix: size one, duplicate rows, pairwise equality") {
  const TinyRun run = make_tiny_run(9);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const InfluenceOptions options{InfluenceVariant::kLiteral, CheckpointMode::kStrict};

  Bag one = train_bags.at(0);
  one.features = one.features.topRows(1);
  one.presence = {1};
  const SelfInfluenceMatrix m1 = self_influence_matrix(run.archive, one, options);
  CHECK(m1.scores.rows() == 1);
  const auto pair11 = tracin_pair(run.archive, as_singleton_bag(one, 0),
                                  as_singleton_bag(one, 0), options);
  CHECK(m1.scores(0, 0) == pair11.score);

  Bag dup = train_bags.at(1);
  dup.features.row(1) = dup.features.row(0);
  const SelfInfluenceMatrix md = self_influence_matrix(run.archive, dup, options);
  CHECK((md.scores.row(0) - md.scores.row(1)).cwiseAbs().maxCoeff() == 0.0);

  const Bag four = train_bags.at(2);
  REQUIRE(four.num_instances() == 4);
  const SelfInfluenceMatrix m4 = self_influence_matrix(run.archive, four, options);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) {
      const auto p = tracin_pair(run.archive, as_singleton_bag(four, i),
                                 as_singleton_bag(four, j), options);
      CHECK(m4.scores(i, j) == p.score);
    }
  }
}

TEST_CASE("bag_self_influence_score takes the max diagonal") {
  SelfInfluenceMatrix m;
  m.scores.resize(3, 3);
  m.scores << 0.1, 2.0, -1.0, 0.0, 0.9, 5.0, -2.0, 1.0, 0.3;
  CHECK(bag_self_influence_score(m) == 0.9);
  m.scores.setZero();
  CHECK(bag_self_influence_score(m) == 0.0);
}

TEST_CASE("batched self-influence scores equal the matrix path") {
  const TinyRun run = make_tiny_run(10);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  for (const auto variant : {InfluenceVariant::kLiteral, InfluenceVariant::kPreconditionedIp}) {
    const InfluenceOptions options{variant, CheckpointMode::kStrict};
    const auto scores = self_influence_scores(run.archive, train_bags, options);
    REQUIRE(scores.size() == train_bags.size());
    for (std::size_t i = 0; i < train_bags.size(); ++i) {
      const auto matrix = self_influence_matrix(run.archive, train_bags[i], options);
      CHECK(scores[i].score == bag_self_influence_score(matrix));
      CHECK(scores[i].bag_id == train_bags[i].id);
    }
  }
}

TEST_CASE("ranking sorts by score then ascending id") {
  std::vector<BagScore> scores{{7, 1.0, 1}, {3, 3.0, 1}, {5, 2.0, 1}};
  CHECK(rank_bags_by_self_influence(scores) == std::vector<std::uint32_t>{3, 5, 7});

  std::vector<BagScore> ties{{9, 1.0, 1}, {2, 1.0, 1}, {5, 1.0, 1}};
  CHECK(rank_bags_by_self_influence(ties) == std::vector<std::uint32_t>{2, 5, 9});

  std::vector<BagScore> bad{{1, std::nan(""), 1}};
  CHECK_THROWS_AS(rank_bags_by_self_influence(bad), std::runtime_error);
}

TEST_CASE("update_dot ignores the candidate in relaxed mode but not in strict mode") {
  const TinyRun run = make_tiny_run(11);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const auto val_bags = run.dataset.split_bags(Split::kVal);
  const Bag target = as_singleton_bag(val_bags.at(0), 0);

  const InfluenceOptions relaxed{InfluenceVariant::kUpdateDot, CheckpointMode::kTracInCp};
  const auto a = tracin_pair(run.archive, target, as_singleton_bag(train_bags.at(0), 0), relaxed);
  const auto b = tracin_pair(run.archive, target, as_singleton_bag(train_bags.at(5), 3), relaxed);
  CHECK(a.score == b.score);  // identical for every candidate: only meaningful in strict mode

  // In strict mode candidates differ through checkpoint inclusion.
  const InfluenceOptions strict{InfluenceVariant::kUpdateDot, CheckpointMode::kStrict};
  Bag outsider = oracles::random_bag(2, 6, 55);
  outsider.id = 4242;
  const auto c = tracin_pair(run.archive, target, as_singleton_bag(outsider, 0), strict);
  CHECK(c.checkpoints_used == 0);
  CHECK(a.checkpoints_used > 0);
}

TEST_CASE("pair scores are bit-reproducible") {
  const TinyRun run = make_tiny_run(12);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const auto val_bags = run.dataset.split_bags(Split::kVal);
  const Bag target = as_singleton_bag(val_bags.at(1), 2);
  const Bag candidate = as_singleton_bag(train_bags.at(3), 1);
  const InfluenceOptions options{InfluenceVariant::kLiteral, CheckpointMode::kStrict};
  const auto s1 = tracin_pair(run.archive, target, candidate, options);
  const auto s2 = tracin_pair(run.archive, target, candidate, options);
  CHECK(s1.score == s2.score);
}

TEST_CASE("influence table files round-trip") {
  const TinyRun run = make_tiny_run(13);
  const auto train_bags = run.dataset.split_bags(Split::kTrain);
  const auto val_bags = run.dataset.split_bags(Split::kVal);
  std::vector<Bag> targets{as_singleton_bag(val_bags.at(0), 0),
                           as_singleton_bag(val_bags.at(1), 1)};
  std::vector<Bag> candidates{as_singleton_bag(train_bags.at(0), 0),
                              as_singleton_bag(train_bags.at(1), 1),
                              as_singleton_bag(train_bags.at(2), 2)};
  const InfluenceTable table =
      influence_table(run.archive, targets, candidates, {InfluenceVariant::kLiteral, {}});
  const auto dir = oracles::temp_dir("influence_io");
  write_influence_table(dir / "table.tsv", table);
  const InfluenceTable back = read_influence_table(dir / "table.tsv");
  REQUIRE(back.entries.size() == table.entries.size());
  CHECK(back.targets.size() == 2);
  CHECK(back.candidates.size() == 3);
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    CHECK(back.entries[i].score == table.entries[i].score);  // %.17g round-trips doubles
    CHECK(back.entries[i].target == table.entries[i].target);
    CHECK(back.entries[i].candidate == table.entries[i].candidate);
    CHECK(back.entries[i].checkpoints_used == table.entries[i].checkpoints_used);
  }
}

TEST_CASE("mislabeled bags rank above the clean median in a trained toy run") {
  int wins = 0;
  const int seeds = 5;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    SynthConfig sc;
    sc.bag_count = 150;
    sc.instances_per_bag = 4;
    sc.feature_dim = 6;
    sc.signal_instances = 4;
    sc.signal_marker = 4.0;
    sc.severity_scale = 4.0;
    sc.background_severity_leak = 1.0;
    sc.background_noise = 0.35;
    sc.split_fractions = {0.8, 0.2, 0.0};
    sc.seed = seed;
    SynthDataset ds = generate(sc);

    // Plant exactly one clearly mislabeled training bag: a low-severity mild
    // visit relabeled as moderate.
    DatasetBag* victim = nullptr;
    for (auto& db : ds.bags) {
      if (db.split == Split::kTrain && db.bag.reader1_label == kMild &&
          db.bag.latent_severity < 2.5) {
        victim = &db;
        break;
      }
    }
    REQUIRE(victim != nullptr);
    victim->bag.reader1_label = kModerate;
    victim->reader_disagreement = true;

    TrainConfig tc;
    tc.epsilon = 3e-2;
    tc.epochs = 40;
    tc.checkpoint_cadence = 5;
    tc.seed = seed;
    const ModelConfig mc{.feature_dim = 6, .encoder_hidden = 12, .embed_dim = 8,
                         .attention_dim = 6, .head_hidden = 6};
    const auto train_bags = ds.split_bags(Split::kTrain);
    const TrainResult result =
        train(tc, mc, train_bags, ds.split_bags(Split::kVal), "fp", "cfg");
    const RunArchive archive = RunArchive::from_parts(result.manifest, result.checkpoints);

    const auto scores = self_influence_scores(archive, train_bags,
                                              {InfluenceVariant::kPreconditionedIp, {}});
    double victim_score = 0.0;
    std::vector<double> clean;
    for (const auto& s : scores) {
      if (s.bag_id == victim->bag.id) {
        victim_score = s.score;
      } else {
        clean.push_back(s.score);
      }
    }
    std::sort(clean.begin(), clean.end());
    const double median = clean[clean.size() / 2];
    wins += (victim_score > median) ? 1 : 0;
  }
  CHECK(wins >= 4);  // >= 80% of seeds
}
